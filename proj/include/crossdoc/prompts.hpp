#pragma once

// Prompt texts sent to the chat and pointing models. The published wording
// is kept verbatim; anything appended is kept separate so it can be seen.

#include <string>
#include <string_view>
#include <vector>

namespace crossdoc::prompts {

// Whole-paper identification: one developer message, paper attached, answer
// keyed "fig#".
std::string_view identify_paper();

// Image-only identification: a plain list of items.
std::string_view identify_image();

// Caption/passage linking template with <entities> and <caption> slots.
// The published text says "I should be the identical caption"; fix_typo
// swaps in "it".
std::string link_template(bool fix_typo = false);
std::string link_prompt(const std::vector<std::string>& entities, std::string_view unit_text, bool fix_typo = false);

std::string pointing(std::string_view target);

std::string_view describe();

// Appended to the description request so answers carry related sentences.
std::string_view describe_related_request();

}  // namespace crossdoc::prompts
