#pragma once

// The six probing prompt styles and their canonical string tokens. The token
// order below is also the canonical column order in score tables.

#include <array>
#include <stdexcept>
#include <string>

namespace icpl {

enum class PromptStyle {
    zero_shot,
    two_shot_no_hist,
    two_shot_hist,
    c_zero_shot,
    c_two_shot_no_hist,
    c_two_shot_hist,
};

inline constexpr std::array<PromptStyle, 6> all_styles = {
    PromptStyle::zero_shot,        PromptStyle::two_shot_no_hist,   PromptStyle::two_shot_hist,
    PromptStyle::c_zero_shot,      PromptStyle::c_two_shot_no_hist, PromptStyle::c_two_shot_hist,
};

inline const std::string& style_name(PromptStyle s) {
    static const std::array<std::string, 6> names = {
        "zero_shot", "two_shot_no_hist", "two_shot_hist",
        "c_zero_shot", "c_two_shot_no_hist", "c_two_shot_hist",
    };
    return names[static_cast<size_t>(s)];
}

inline PromptStyle style_from_name(const std::string& name) {
    for (PromptStyle s : all_styles)
        if (style_name(s) == name) return s;
    throw std::invalid_argument("unknown prompt style: " + name);
}

// Contrastive styles present two user profiles in one prompt.
inline bool is_contrastive(PromptStyle s) {
    return s == PromptStyle::c_zero_shot || s == PromptStyle::c_two_shot_no_hist ||
           s == PromptStyle::c_two_shot_hist;
}

inline bool has_history(PromptStyle s) {
    return s == PromptStyle::zero_shot || s == PromptStyle::c_zero_shot ||
           s == PromptStyle::two_shot_hist || s == PromptStyle::c_two_shot_hist;
}

inline bool has_examples(PromptStyle s) {
    return s == PromptStyle::two_shot_no_hist || s == PromptStyle::c_two_shot_no_hist ||
           s == PromptStyle::two_shot_hist || s == PromptStyle::c_two_shot_hist;
}

}  // namespace icpl
