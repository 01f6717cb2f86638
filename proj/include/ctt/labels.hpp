#pragma once

#include <stdexcept>
#include <string>

namespace ctt {

// Slice/patient classes. Order encodes severity: aggregation over a patient
// takes the most severe slice (WNL < OtherDisease < PE).
enum class SliceLabel { WNL = 0, OtherDisease = 1, PE = 2 };

inline const char* label_str(SliceLabel l) {
  switch (l) {
    case SliceLabel::WNL: return "WNL";
    case SliceLabel::OtherDisease: return "OTHER";
    case SliceLabel::PE: return "PE";
  }
  return "?";
}

inline SliceLabel parse_label(const std::string& s) {
  if (s == "WNL") return SliceLabel::WNL;
  if (s == "OTHER") return SliceLabel::OtherDisease;
  if (s == "PE") return SliceLabel::PE;
  throw std::invalid_argument("unknown label: " + s);
}

}  // namespace ctt
