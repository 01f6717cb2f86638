#pragma once

#include <cstdint>
#include <stdexcept>
#include <string>
#include <vector>

namespace ctt {

class DicomError : public std::runtime_error {
 public:
  enum class Kind {
    MissingMagic,
    UnsupportedTransferSyntax,
    MissingRequiredTag,
    PixelLengthMismatch,
    Truncated,
    MixedSeries,
    DuplicateInstance,
    EmptySeries,
  };
  DicomError(Kind kind, const std::string& what) : std::runtime_error(what), kind_(kind) {}
  Kind kind() const { return kind_; }

 private:
  Kind kind_;
};

enum class PixelRepresentation { Unsigned, Signed };

// One parsed slice of the restricted DICOM subset: uncompressed Explicit VR
// Little Endian, 16-bit MONOCHROME2.
struct DicomSlice {
  std::string patient_id;
  std::string series_id;
  int instance_number = 0;
  int rows = 0;
  int cols = 0;
  int bits_allocated = 16;
  PixelRepresentation pixel_representation = PixelRepresentation::Unsigned;
  double rescale_slope = 1.0;
  double rescale_intercept = 0.0;
  std::vector<std::uint16_t> stored_pixels;  // raw 16-bit words, row-major
};

// A 2-D grid of Hounsfield units, clamped to [-1024, 3071].
struct HuSlice {
  int width = 0;
  int height = 0;
  std::vector<float> hu;  // row-major, height x width

  HuSlice() = default;
  HuSlice(int w, int h) : width(w), height(h), hu(static_cast<std::size_t>(w) * h, 0.0f) {}
  float& at(int x, int y) { return hu[static_cast<std::size_t>(y) * width + x]; }
  float at(int x, int y) const { return hu[static_cast<std::size_t>(y) * width + x]; }
};

struct SeriesVolume {
  std::string patient_id;
  std::string series_id;
  std::vector<int> instance_numbers;  // ascending, parallel to slices
  std::vector<HuSlice> slices;
};

constexpr float kHuMin = -1024.0f;
constexpr float kHuMax = 3071.0f;

// Parses one Part-10 file image from memory. See DicomError for the failure
// taxonomy; the parser never reads past the declared element lengths.
DicomSlice parse_dicom(const std::vector<std::uint8_t>& bytes);

// Rescale to Hounsfield units: hu = clamp(stored * slope + intercept).
HuSlice to_hu(const DicomSlice& slice);

// Loads and orders one patient series; slices are sorted by instance number.
SeriesVolume load_series(const std::vector<std::string>& paths);

std::vector<std::uint8_t> read_file_bytes(const std::string& path);

}  // namespace ctt
