#include "crossdoc/pipeline.hpp"

#include <gtest/gtest.h>

#include <random>

#include "crossdoc/bundler.hpp"
#include "crossdoc/error.hpp"
#include "test_util.hpp"

namespace crossdoc::pipeline {
namespace {

namespace td = crossdoc::testing;
namespace fs = std::filesystem;

ErrorCode error_of(auto&& fn) {
    try {
        fn();
    } catch (const Error& e) {
        return e.code();
    }
    ADD_FAILURE() << "expected an error";
    return ErrorCode::InvalidArgument;
}

Document golden_doc() { return ingest::parse_document(td::read_file(td::data_path("golden/paper01.html"))); }

// Runs the golden document with `mutate` applied to the canned responses.
PipelineResult run_with(const std::function<void(nlohmann::json&)>& mutate, const std::string& name) {
    auto responses = td::read_json(td::data_path("golden/paper01.responses.json"));
    mutate(responses);
    auto dir = td::temp_dir(name);
    td::write_file(dir / "responses.json", responses.dump());
    td::write_file(dir / "config.json", R"({"mode":"mock","chat_provider":"mock","pointing_provider":"mock",)"
                                        R"("responses":"responses.json"})");
    Config config = load_config(dir / "config.json");
    auto doc = golden_doc();
    return run_pipeline(doc, make_providers(config), options_from_config(config, td::data_path("golden")));
}

PipelineResult run_golden() {
    Config config = load_config(td::data_path("golden/paper01.config.json"));
    auto doc = golden_doc();
    return run_pipeline(doc, make_providers(config), options_from_config(config, td::data_path("golden")));
}

// ---- golden ---------------------------------------------------------------

TEST(Golden, BundleMatchesCommittedBytes) {
    std::string expected = td::read_file(td::data_path("golden/paper01.bundle.json"));
    for (int run = 0; run < 3; ++run) {
        EXPECT_EQ(bundler::write_bundle(run_golden().bundle), expected) << "run " << run;
    }
}

TEST(Golden, WorkerCountDoesNotChangeOutput) {
    Config config = load_config(td::data_path("golden/paper01.config.json"));
    auto doc = golden_doc();
    auto options = options_from_config(config, td::data_path("golden"));
    options.workers = 3;
    auto parallel = run_pipeline(doc, make_providers(config), options);
    EXPECT_EQ(bundler::write_bundle(parallel.bundle), td::read_file(td::data_path("golden/paper01.bundle.json")));
}

TEST(Golden, ReportSummary) {
    auto r = run_golden();
    EXPECT_EQ(r.report["annotated_figures"], 3);
    EXPECT_TRUE(r.validation.ok());
    // 7 + 3 + 4 points over three figures, before pruning removes none of them.
    EXPECT_NEAR(r.report["mean_points_per_figure"].get<double>(), 14.0 / 3, 1e-12);
}

TEST(Golden, DesignedCasesSurface) {
    auto r = run_golden();
    std::set<std::string> codes;
    for (const auto& d : r.bundle.diagnostics) codes.insert(d.code);
    for (const char* c : {"CROSS_CAPTION_REFERENCE", "PHRASE_NOT_FOUND", "LINK_REALIGNED", "DESCRIPTION_TRUNCATED",
                          "MENTION_OVERLAP_DISCARDED", "ENTITY_PRUNED", "UNRESOLVED_RELATED_SENTENCE"}) {
        EXPECT_TRUE(codes.count(c)) << c;
    }
    // The duplicate label collapsed into one entity.
    int chatbots = 0;
    for (const auto& e : r.bundle.entities) chatbots += label_key(e.label) == "carecall chatbot";
    EXPECT_EQ(chatbots, 1);
}

// ---- failure isolation ----------------------------------------------------------

TEST(Isolation, OneFigureFailsOthersSurvive) {
    auto r = run_with([](nlohmann::json& j) { j["chat"]["identify/fig2"] = "I cannot see a figure."; }, "iso");
    EXPECT_EQ(r.report["annotated_figures"], 2);
    EXPECT_EQ(r.report["figures"][1]["status"], "failed");
    EXPECT_EQ(r.report["figures"][1]["stages"]["identify"]["error"], "UnparsableResponse");
    for (const auto& e : r.bundle.entities) EXPECT_NE(e.figure_number, 2);
}

TEST(Isolation, AllFiguresFailingIsPipelineFailed) {
    try {
        run_with(
            [](nlohmann::json& j) {
                for (int n = 1; n <= 3; ++n) j["chat"]["identify/fig" + std::to_string(n)] = "{}";
            },
            "allfail");
        FAIL() << "expected PipelineFailed";
    } catch (const PipelineError& e) {
        EXPECT_EQ(e.code(), ErrorCode::PipelineFailed);
        EXPECT_EQ(e.report()["annotated_figures"], 0);
        EXPECT_EQ(e.report()["figures"][0]["stages"]["identify"]["error"], "MissingFigureKey");
    }
}

TEST(Isolation, BadLinkUnitIsSkipped) {
    auto r = run_with([](nlohmann::json& j) { j["chat"]["link/fig1/p2"] = R"({"Something else entirely.": []})"; },
                      "badlink");
    EXPECT_EQ(r.report["figures"][0]["stages"]["link"]["failed"], 1);
    bool saw = false;
    for (const auto& d : r.bundle.diagnostics) saw |= d.message.find("ReconstructionMismatch") != std::string::npos;
    EXPECT_TRUE(saw);
}

TEST(Isolation, PointingFailureKeepsEntity) {
    auto r = run_with([](nlohmann::json& j) { j["pointing"]["point/fig3/Precision line"] = "<point x=\"140\">"; },
                      "badpoint");
    const linkgraph::Entity* precision = nullptr;
    for (const auto& e : r.bundle.entities) {
        if (e.label == "Precision line") precision = &e;
    }
    ASSERT_NE(precision, nullptr);
    EXPECT_TRUE(precision->points.empty());
    EXPECT_EQ(r.report["figures"][2]["stages"]["locate"]["status"], "partial");
}

// ---- identification ---------------------------------------------------------

TEST(Identification, FigureKeySpellings) {
    for (const char* key : {"fig3", "Figure 3", "fig. 3", "FIG_3", "figure#3"}) {
        std::string raw = std::string("{\"") + key + "\": [\"A\", \"B\"]}";
        EXPECT_EQ(parse_identification(raw, 3, IdentificationPrompt::Paper), (std::vector<std::string>{"A", "B"}))
            << key;
    }
    EXPECT_EQ(error_of([] { parse_identification(R"({"fig30": ["A"]})", 3, IdentificationPrompt::Paper); }),
              ErrorCode::MissingFigureKey);
    EXPECT_EQ(error_of([] { parse_identification("no json here", 3, IdentificationPrompt::Paper); }),
              ErrorCode::UnparsableResponse);
}

TEST(Identification, ImageVariantAcceptsListsAndLines) {
    EXPECT_EQ(parse_identification(R"(["x", "y"])", 1, IdentificationPrompt::Image),
              (std::vector<std::string>{"x", "y"}));
    EXPECT_EQ(parse_identification("- Encoder\n- Decoder\n", 1, IdentificationPrompt::Image),
              (std::vector<std::string>{"Encoder", "Decoder"}));
}

TEST(Identification, DuplicatesByKeyCollapse) {
    auto labels = parse_identification(R"({"fig1": ["The Encoder", "encoder", "Decoder"]})", 1,
                                       IdentificationPrompt::Paper);
    EXPECT_EQ(labels, (std::vector<std::string>{"The Encoder", "Decoder"}));
}

TEST(LabelKey, Normalization) {
    EXPECT_EQ(label_key("  The   Chatbot "), "chatbot");
    EXPECT_EQ(label_key("a Dashboard"), "dashboard");
    EXPECT_EQ(label_key("Anchor"), "anchor");
}

// ---- linking ------------------------------------------------------------------

TEST(LinkResponse, ExactKeysGiveSpans) {
    std::string unit = "We use an encoder. The decoder follows.";
    auto r = parse_link_response(R"({"We use an encoder. ": [["an encoder", "Encoder"]],)"
                                 R"( "The decoder follows.": [["The decoder", "Decoder"]]})",
                                 unit);
    ASSERT_EQ(r.sentences.size(), 2u);
    EXPECT_FALSE(r.realigned);
    const auto& p = r.sentences[1].phrases.at(0);
    EXPECT_EQ(unit.substr(p.span.begin, p.span.end - p.span.begin), "The decoder");
}

TEST(LinkResponse, WhitespaceRealignment) {
    std::string unit = "Alpha  beta.\nGamma delta.";
    auto r = parse_link_response(R"({"Alpha beta. ": [], "Gamma delta.": [["delta", "D"]]})", unit);
    EXPECT_TRUE(r.realigned);
    ASSERT_EQ(r.sentences.size(), 2u);
    EXPECT_EQ(r.sentences[0].sentence + r.sentences[1].sentence, unit);
    EXPECT_EQ(r.sentences[1].phrases.at(0).phrase, "delta");
}

TEST(LinkResponse, MismatchCarriesDiff) {
    try {
        parse_link_response(R"({"Alpha betta.": []})", "Alpha beta.");
        FAIL();
    } catch (const Error& e) {
        EXPECT_EQ(e.code(), ErrorCode::ReconstructionMismatch);
        EXPECT_NE(std::string(e.what()).find("+t"), std::string::npos) << e.what();
    }
}

TEST(LinkResponse, MissingPhraseIsIssueNotError) {
    auto r = parse_link_response(R"({"One sentence.": [["nowhere", "X"]]})", "One sentence.", "tag");
    ASSERT_EQ(r.issues.size(), 1u);
    EXPECT_EQ(r.issues[0].code, "PHRASE_NOT_FOUND");
    EXPECT_TRUE(r.sentences[0].phrases.empty());
}

// Applying the edit script to `expected` yields `actual`.
TEST(AlignedDiff, ReconstructsBothSides) {
    std::mt19937 rng(17);
    const std::string alphabet = "ab c";
    for (int trial = 0; trial < 300; ++trial) {
        std::string x, y;
        for (int i = rng() % 14; i > 0; --i) x += alphabet[rng() % alphabet.size()];
        for (int i = rng() % 14; i > 0; --i) y += alphabet[rng() % alphabet.size()];
        std::string from, to;
        for (const auto& op : aligned_diff(x, y)) {
            if (op.kind != DiffOp::Kind::Insert) from += op.text;
            if (op.kind != DiffOp::Kind::Delete) to += op.text;
        }
        EXPECT_EQ(from, x);
        EXPECT_EQ(to, y);
    }
}

// ---- descriptions -----------------------------------------------------------

TEST(Descriptions, SentenceLimit) {
    bool cut = false;
    EXPECT_EQ(limit_sentences("One. Two. Three.", 3, &cut), "One. Two. Three.");
    EXPECT_FALSE(cut);
    EXPECT_EQ(limit_sentences("One. Two. Three. Four.", 3, &cut), "One. Two. Three.\xE2\x80\xA6");
    EXPECT_TRUE(cut);
}

TEST(Descriptions, RelatedSentenceResolution) {
    auto doc = golden_doc();
    // Verbatim containment.
    EXPECT_EQ(resolve_related_sentence(doc, "Each completed dialog is forwarded to the dashboard."), 3);
    EXPECT_FALSE(resolve_related_sentence(doc, "Completely unrelated words about astronomy and telescopes."));
}

}  // namespace
}  // namespace crossdoc::pipeline
