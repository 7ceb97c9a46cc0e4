#include "crossdoc/cli.hpp"

#include <fstream>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>

#include <CLI11.hpp>

#include "crossdoc/analysis.hpp"
#include "crossdoc/bundler.hpp"
#include "crossdoc/config.hpp"
#include "crossdoc/error.hpp"
#include "crossdoc/ingest.hpp"
#include "crossdoc/linkgraph.hpp"
#include "crossdoc/pipeline.hpp"
#include "crossdoc/server.hpp"

namespace crossdoc::cli {

namespace fs = std::filesystem;
using Json = nlohmann::ordered_json;

namespace {

std::string read_file(const fs::path& p) {
    std::error_code ec;
    if (!fs::is_regular_file(p, ec)) throw Error(ErrorCode::Io, "file not found: " + p.string());
    std::ifstream in(p, std::ios::binary);
    if (!in) throw Error(ErrorCode::Io, "cannot read " + p.string());
    std::ostringstream ss;
    ss << in.rdbuf();
    return ss.str();
}

void write_file(const fs::path& p, std::string_view bytes) {
    if (p.has_parent_path()) fs::create_directories(p.parent_path());
    std::ofstream out(p, std::ios::binary | std::ios::trunc);
    if (!out) throw Error(ErrorCode::Io, "cannot write " + p.string());
    out.write(bytes.data(), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw Error(ErrorCode::Io, "short write to " + p.string());
}

// "-" is stdout.
void emit(const std::string& target, std::string_view bytes, std::ostream& out) {
    if (target.empty() || target == "-") {
        out << bytes;
    } else {
        write_file(target, bytes);
    }
}

Config config_or_default(const std::string& path) {
    if (path.empty()) return Config{};
    return load_config(path);
}

bundler::RenderOptions render_options(const Config& config) {
    bundler::RenderOptions o;
    if (!config.strip_selectors.empty()) o.strip_selectors = config.strip_selectors;
    return o;
}

Json document_to_json(const ingest::Document& doc, const ingest::ReferencePattern& pattern) {
    Json j;
    j["doc_id"] = doc.doc_id;
    j["source_hash"] = doc.source_hash;
    Json passages = Json::array();
    for (const auto& p : doc.passages) {
        passages.push_back({{"index", p.index}, {"element_id", p.element_id}, {"text", p.text}});
    }
    Json figures = Json::array();
    for (const auto& f : doc.figures) {
        Json refs = Json::array();
        for (const auto& r : ingest::find_figure_references(doc, f.figure_number, pattern)) {
            refs.push_back({{"passage_index", r.passage_index},
                            {"start", r.match_span.begin},
                            {"end", r.match_span.end},
                            {"text", r.matched_text}});
        }
        figures.push_back({{"figure_number", f.figure_number},
                           {"element_id", f.element_id},
                           {"image_ref", f.image_ref},
                           {"caption", f.caption},
                           {"caption_sentences", f.caption_sentences},
                           {"position_index", f.position_index},
                           {"references", refs}});
    }
    j["passages"] = passages;
    j["figures"] = figures;
    return j;
}

struct Loaded {
    ingest::Document doc;
    linkgraph::AugmentationBundle bundle;
};

Loaded load_pair(const std::string& bundle_path, const std::string& doc_path) {
    Loaded l;
    l.doc = ingest::parse_document(read_file(doc_path));
    l.bundle = bundler::read_bundle(read_file(bundle_path));
    if (l.bundle.source_hash != l.doc.source_hash) {
        throw Error(ErrorCode::InvalidArgument, bundle_path + " was not built from " + doc_path + " (source_hash " +
                                                    l.bundle.source_hash + " vs " + l.doc.source_hash + ")");
    }
    return l;
}

fs::path default_report_path(const std::string& out, const std::string& doc) {
    if (!out.empty() && out != "-") return out + ".report.json";
    return fs::path(doc).filename().replace_extension(".report.json");
}

}  // namespace

int cli_dispatch(int argc, const char* const* argv, std::ostream& out, std::ostream& err) {
    CLI::App app{"crossdoc: link figure entities to the text that mentions them", "crossdoc"};
    app.require_subcommand(1);

    // ingest
    std::string ingest_doc, ingest_config, ingest_out;
    auto* ingest_cmd = app.add_subcommand("ingest", "Parse an HTML paper and print its passages and figures as JSON");
    ingest_cmd->add_option("doc", ingest_doc, "HTML document")->required();
    ingest_cmd->add_option("--config", ingest_config, "Config file (reference_patterns)");
    ingest_cmd->add_option("-o,--out", ingest_out, "Output path (default stdout)");

    // annotate
    std::string ann_doc, ann_config, ann_out, ann_report;
    auto* annotate_cmd = app.add_subcommand("annotate", "Run the annotation pipeline and write a bundle");
    annotate_cmd->add_option("doc", ann_doc, "HTML document")->required();
    annotate_cmd->add_option("--config", ann_config, "Config file");
    annotate_cmd->add_option("-o,--out", ann_out, "Bundle path (default stdout)");
    annotate_cmd->add_option("--report", ann_report, "Stage report path (default <out>.report.json)");

    // validate
    std::string val_bundle, val_doc, val_config;
    auto* validate_cmd = app.add_subcommand("validate", "Check a bundle against its document");
    validate_cmd->add_option("bundle", val_bundle, "Bundle JSON")->required();
    validate_cmd->add_option("--doc", val_doc, "HTML document")->required();
    validate_cmd->add_option("--config", val_config, "Config file (reference_patterns)");

    // bundle
    std::string bun_bundle, bun_doc, bun_config, bun_root;
    auto* bundle_cmd = app.add_subcommand("bundle", "Write the bundle, both variants and assets into a serving root");
    bundle_cmd->add_option("bundle", bun_bundle, "Bundle JSON")->required();
    bundle_cmd->add_option("--doc", bun_doc, "HTML document")->required();
    bundle_cmd->add_option("--root", bun_root, "Serving root directory")->required();
    bundle_cmd->add_option("--config", bun_config, "Config file (strip_selectors)");

    // render
    std::string ren_bundle, ren_doc, ren_config, ren_out, ren_variant = "aug";
    auto* render_cmd = app.add_subcommand("render", "Render one HTML variant");
    render_cmd->add_option("bundle", ren_bundle, "Bundle JSON")->required();
    render_cmd->add_option("--doc", ren_doc, "HTML document")->required();
    render_cmd->add_option("--variant", ren_variant, "aug or base")->check(CLI::IsMember({"aug", "base"}));
    render_cmd->add_option("--config", ren_config, "Config file (strip_selectors)");
    render_cmd->add_option("-o,--out", ren_out, "Output path (default stdout)");

    // serve
    std::string srv_root, srv_config, srv_host = "127.0.0.1";
    std::optional<int> srv_port;
    auto* serve_cmd = app.add_subcommand("serve", "Serve a root of rendered artifacts over HTTP (read-only)");
    serve_cmd->add_option("root", srv_root, "Serving root directory")->required();
    serve_cmd->add_option("--port", srv_port, std::string("Port (default $") + server::kPortEnv + " or " +
                                                  std::to_string(server::kDefaultPort) + ")")
        ->check(CLI::Range(0, 65535));
    serve_cmd->add_option("--host", srv_host, "Bind address");
    serve_cmd->add_option("--config", srv_config, "Config file (cors_origin)");

    // stats
    std::string st_scores, st_times, st_tlx, st_map, st_level = "ordinal", st_json, st_format = "both";
    double st_time_margin = 20, st_tlx_margin = 1;
    auto* stats_cmd = app.add_subcommand("stats", "Study statistics from score, time and TLX tables");
    stats_cmd->add_option("--scores", st_scores, "scores.csv")->check(CLI::ExistingFile);
    stats_cmd->add_option("--times", st_times, "times.csv")->check(CLI::ExistingFile);
    stats_cmd->add_option("--tlx", st_tlx, "tlx.csv")->check(CLI::ExistingFile);
    stats_cmd->add_option("--distance-map", st_map, "Question distance map (JSON)")->check(CLI::ExistingFile);
    stats_cmd->add_option("--alpha-level", st_level, "Krippendorff level")
        ->check(CLI::IsMember({"nominal", "ordinal", "interval"}));
    stats_cmd->add_option("--time-margin", st_time_margin, "Equivalence margin for times, seconds");
    stats_cmd->add_option("--tlx-margin", st_tlx_margin, "Equivalence margin for TLX, scale points");
    stats_cmd->add_option("--json", st_json, "Also write the JSON report here");
    stats_cmd->add_option("--format", st_format, "json, table or both")->check(CLI::IsMember({"json", "table", "both"}));

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e, out, err);
    } catch (const CLI::ParseError& e) {
        app.exit(e, out, err);
        return kExitUsage;
    }

    try {
        if (*ingest_cmd) {
            Config config = config_or_default(ingest_config);
            auto doc = ingest::parse_document(read_file(ingest_doc));
            emit(ingest_out, document_to_json(doc, reference_pattern(config)).dump(2) + "\n", out);
            return kExitOk;
        }

        if (*annotate_cmd) {
            auto doc = ingest::parse_document(read_file(ann_doc));
            Config config = config_or_default(ann_config);
            auto providers = make_providers(config);
            auto options = pipeline::options_from_config(config, fs::path(ann_doc).parent_path());
            fs::path report_path = ann_report.empty() ? default_report_path(ann_out, ann_doc) : fs::path(ann_report);
            try {
                auto result = pipeline::run_pipeline(doc, providers, options);
                write_file(report_path, result.report.dump(2) + "\n");
                emit(ann_out, bundler::write_bundle(result.bundle), out);
            } catch (const pipeline::PipelineError& e) {
                write_file(report_path, e.report().dump(2) + "\n");
                err << "crossdoc annotate: " << e.what() << "\n";
                err << "report: " << report_path.string() << "\n";
                return kExitFailure;
            }
            return kExitOk;
        }

        if (*validate_cmd) {
            auto l = load_pair(val_bundle, val_doc);
            Config config = config_or_default(val_config);
            auto report = linkgraph::validate_bundle(l.bundle, l.doc, reference_pattern(config));
            out << linkgraph::report_to_json(report).dump(2) << "\n";
            if (!report.ok()) {
                err << "crossdoc validate: " << report.errors.size() << " error(s)\n";
                return kExitFailure;
            }
            return kExitOk;
        }

        if (*bundle_cmd) {
            auto l = load_pair(bun_bundle, bun_doc);
            Config config = config_or_default(bun_config);
            auto report = linkgraph::validate_bundle(l.bundle, l.doc, reference_pattern(config));
            if (!report.ok()) {
                out << linkgraph::report_to_json(report).dump(2) << "\n";
                err << "crossdoc bundle: bundle does not validate\n";
                return kExitFailure;
            }
            auto ro = render_options(config);
            fs::path root(bun_root);
            const std::string& id = l.bundle.doc_id;
            write_file(root / (id + ".bundle.json"), bundler::write_bundle(l.bundle));
            write_file(root / (id + ".aug.html"), bundler::augment_html(l.doc, l.bundle, ro));
            write_file(root / (id + ".base.html"), bundler::emit_baseline_html(l.doc, ro));
            fs::path src_dir = fs::path(bun_doc).parent_path();
            for (const auto& f : l.doc.figures) {
                fs::path rel = fs::path(f.image_ref).lexically_normal();
                if (f.image_ref.empty() || rel.is_absolute() || f.image_ref.find("://") != std::string::npos ||
                    (!rel.empty() && *rel.begin() == "..")) {
                    continue;
                }
                std::error_code ec;
                fs::path src = src_dir / rel;
                if (!fs::is_regular_file(src, ec)) {
                    err << "crossdoc bundle: figure " << f.figure_number << " image missing: " << src.string() << "\n";
                    continue;
                }
                fs::path dst = root / (id + ".assets") / rel;
                fs::create_directories(dst.parent_path());
                fs::copy_file(src, dst, fs::copy_options::overwrite_existing);
            }
            out << root.string() << "/" << id << "\n";
            return kExitOk;
        }

        if (*render_cmd) {
            auto l = load_pair(ren_bundle, ren_doc);
            auto ro = render_options(config_or_default(ren_config));
            std::string html = ren_variant == "base" ? bundler::emit_baseline_html(l.doc, ro)
                                                     : bundler::augment_html(l.doc, l.bundle, ro);
            emit(ren_out, html, out);
            return kExitOk;
        }

        if (*serve_cmd) {
            Config config = config_or_default(srv_config);
            server::ServerOptions so;
            so.root = srv_root;
            so.host = srv_host;
            so.port = server::resolve_port(srv_port);
            so.cors_origin = config.cors_origin;
            server::Server s(so);
            out << "serving " << s.documents().size() << " document(s) on http://" << so.host << ":" << s.port()
                << "\n"
                << std::flush;
            s.run();
            return kExitOk;
        }

        if (*stats_cmd) {
            analysis::StatsInputs in;
            if (!st_scores.empty()) in.scores = analysis::parse_scores(read_file(st_scores));
            if (!st_times.empty()) in.times = analysis::parse_times(read_file(st_times));
            if (!st_tlx.empty()) in.tlx = analysis::parse_tlx(read_file(st_tlx));
            if (!st_map.empty()) in.distance_map = analysis::load_distance_map(st_map);
            in.alpha_level = *analysis::parse_level(st_level);
            in.time_margin_s = st_time_margin;
            in.tlx_margin = st_tlx_margin;
            if (in.scores.empty() && in.times.empty() && in.tlx.empty()) {
                err << "crossdoc stats: give at least one of --scores, --times, --tlx\n";
                return kExitUsage;
            }
            auto result = analysis::run_stats(in);
            std::string json = result.report.dump(2) + "\n";
            if (!st_json.empty()) write_file(st_json, json);
            if (st_format != "table") out << json;
            if (st_format == "both") out << "\n";
            if (st_format != "json") out << result.table;
            return kExitOk;
        }
    } catch (const std::exception& e) {
        err << "crossdoc " << app.get_subcommands().front()->get_name() << ": " << e.what() << "\n";
        return kExitFailure;
    }
    return kExitUsage;
}

}  // namespace crossdoc::cli
