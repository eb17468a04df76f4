#include "kwsf/labels.hpp"

#include "kwsf/error.hpp"

namespace kwsf {

const char* error_code_name(ErrorCode code) {
  switch (code) {
    case ErrorCode::kInvalidArgument: return "invalid-argument";
    case ErrorCode::kFormat: return "format";
    case ErrorCode::kUnsupported: return "unsupported";
    case ErrorCode::kIo: return "io";
    case ErrorCode::kEmptyDataset: return "empty-dataset";
    case ErrorCode::kInsufficientNoise: return "insufficient-noise";
    case ErrorCode::kTooShort: return "too-short";
    case ErrorCode::kResolution: return "resolution";
    case ErrorCode::kShape: return "shape";
    case ErrorCode::kDegenerateBatch: return "degenerate-batch";
    case ErrorCode::kConfig: return "config";
    case ErrorCode::kDiverged: return "diverged";
    case ErrorCode::kCorruptCheckpoint: return "corrupt-checkpoint";
  }
  return "unknown";
}

std::string_view class_name(ClassLabel label) {
  return kClassNames[static_cast<std::size_t>(class_index(label))];
}

std::optional<ClassLabel> class_from_index(int index) {
  if (index < 0 || index >= kNumClasses) return std::nullopt;
  return static_cast<ClassLabel>(index);
}

std::optional<ClassLabel> class_from_name(std::string_view name) {
  for (int i = 0; i < kNumClasses; ++i) {
    if (kClassNames[static_cast<std::size_t>(i)] == name) return static_cast<ClassLabel>(i);
  }
  return std::nullopt;
}

bool is_target_word(std::string_view word) {
  for (int i = 0; i < class_index(ClassLabel::kUnknown); ++i) {
    if (kClassNames[static_cast<std::size_t>(i)] == word) return true;
  }
  return false;
}

ClassLabel map_word_to_class(std::string_view word) {
  if (word == kSilenceMarker) return ClassLabel::kSilence;
  if (is_target_word(word)) return *class_from_name(word);
  return ClassLabel::kUnknown;
}

}  // namespace kwsf
