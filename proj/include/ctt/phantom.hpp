#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "ctt/dicom.hpp"
#include "ctt/labels.hpp"
#include "ctt/preprocess.hpp"

namespace ctt {

// Recipe for one synthetic slice. Same spec, same output, bit for bit.
struct PhantomSpec {
  std::uint64_t seed = 0;
  SliceLabel label = SliceLabel::WNL;
  int width = 512;
  int height = 512;
  // Lesion scale parameters (pixels at 512; scaled with image size).
  float pe_bulge_radius_min = 9.0f;
  float pe_bulge_radius_max = 12.0f;
  float pe_core_shrink = 4.0f;  // core radius = bulge radius - shrink
  float patch_radius_min = 13.0f;
  float patch_radius_max = 18.0f;
  float noise_sigma_hu = 20.0f;
};

struct GroundTruth {
  BitMask lung;    // both lung ellipses, before vessels/lesions are carved
  BitMask lesion;  // PE filling defect or disease patch; empty for WNL
  SliceLabel label = SliceLabel::WNL;
};

struct PhantomSlice {
  HuSlice image;
  GroundTruth truth;
};

// Body ellipse of soft tissue over air, two lung ellipses, bright vessel
// strokes; PE adds a dark filling defect inside a vessel bulge, other disease
// a diffuse dense patch in parenchyma away from vessels.
PhantomSlice generate_phantom_slice(const PhantomSpec& spec);

// A patient series. Diseased patients carry lesions on a contiguous 30-60%
// run of slices; the rest are WNL.
struct PhantomPatient {
  std::vector<PhantomSlice> slices;
  std::vector<SliceLabel> slice_labels;
  SliceLabel patient_label = SliceLabel::WNL;
};

PhantomPatient generate_patient(std::uint64_t seed, SliceLabel label, int n_slices,
                                int width = 512, int height = 512);

struct DicomMeta {
  std::string patient_id;
  std::string series_id;
  int instance_number = 0;
};

// Emits the restricted subset read by parse_dicom: Explicit VR Little Endian,
// 16-bit unsigned MONOCHROME2, slope 1, intercept -1024. Integer HU values
// round-trip exactly.
std::vector<std::uint8_t> encode_dicom(const HuSlice& slice, const DicomMeta& meta);
void write_dicom(const HuSlice& slice, const DicomMeta& meta, const std::string& path);

// Ground-truth sidecar: label line, size line, then run-length-encoded lung
// and lesion masks (alternating zero/one run counts, row-major).
void write_ground_truth(const GroundTruth& gt, const std::string& path);
GroundTruth read_ground_truth(const std::string& path);

}  // namespace ctt
