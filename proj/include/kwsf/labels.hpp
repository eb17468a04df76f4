#pragma once

#include <array>
#include <optional>
#include <string>
#include <string_view>

namespace kwsf {

// Twelve-way output space: ten command words, then unknown and silence.
enum class ClassLabel : int {
  kYes = 0,
  kNo,
  kUp,
  kDown,
  kLeft,
  kRight,
  kStop,
  kGo,
  kOn,
  kOff,
  kUnknown,
  kSilence,
};

inline constexpr int kNumClasses = 12;
inline constexpr std::string_view kSilenceMarker = "_silence_";

inline constexpr std::array<std::string_view, kNumClasses> kClassNames = {
    "yes", "no", "up", "down", "left", "right",
    "stop", "go", "on", "off", "unknown", "silence"};

inline constexpr int class_index(ClassLabel label) { return static_cast<int>(label); }

std::string_view class_name(ClassLabel label);
std::optional<ClassLabel> class_from_index(int index);
// Inverse of class_name; nullopt for anything that is not one of the 12 names.
std::optional<ClassLabel> class_from_name(std::string_view name);

// Total on strings: target words map to themselves, the silence marker to
// silence, everything else to unknown.
ClassLabel map_word_to_class(std::string_view word);

bool is_target_word(std::string_view word);

}  // namespace kwsf
