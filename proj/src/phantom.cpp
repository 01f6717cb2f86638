#include "ctt/phantom.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <sstream>

#include "ctt/rng.hpp"

namespace ctt {

namespace {

constexpr float kAirHu = -1000.0f;
constexpr float kSoftTissueHu = 40.0f;
constexpr float kLungHu = -800.0f;
constexpr float kVesselHu = 200.0f;
constexpr float kPeDefectHu = -50.0f;

struct Ellipse {
  float cx, cy, rx, ry;

  bool contains(float x, float y) const {
    const float dx = (x - cx) / rx;
    const float dy = (y - cy) / ry;
    return dx * dx + dy * dy <= 1.0f;
  }
  // True when a disc of the given radius around (x, y) stays inside.
  bool fits_disc(float x, float y, float radius) const {
    if (rx <= radius + 1 || ry <= radius + 1) return false;
    const float dx = (x - cx) / (rx - radius);
    const float dy = (y - cy) / (ry - radius);
    return dx * dx + dy * dy <= 1.0f;
  }
};

// Boundary-point check that `inner` lies inside `outer` shrunk by `margin`.
bool ellipse_inside(const Ellipse& inner, const Ellipse& outer, float margin) {
  const Ellipse shrunk{outer.cx, outer.cy, outer.rx - margin, outer.ry - margin};
  if (shrunk.rx <= 0 || shrunk.ry <= 0) return false;
  for (int k = 0; k < 64; ++k) {
    const float theta = static_cast<float>(k) * 6.2831853f / 64.0f;
    const float x = inner.cx + inner.rx * std::cos(theta);
    const float y = inner.cy + inner.ry * std::sin(theta);
    if (!shrunk.contains(x, y)) return false;
  }
  return true;
}

struct Segment {
  float x0, y0, x1, y1;

  float dist2(float px, float py) const {
    const float vx = x1 - x0, vy = y1 - y0;
    const float len2 = vx * vx + vy * vy;
    float t = len2 > 0 ? ((px - x0) * vx + (py - y0) * vy) / len2 : 0.0f;
    t = std::clamp(t, 0.0f, 1.0f);
    const float dx = px - (x0 + t * vx);
    const float dy = py - (y0 + t * vy);
    return dx * dx + dy * dy;
  }
};

void paint_ellipse(HuSlice& img, const Ellipse& e, float hu) {
  const int x_lo = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x)
      if (e.contains(static_cast<float>(x), static_cast<float>(y))) img.at(x, y) = hu;
}

void mask_ellipse(BitMask& mask, const Ellipse& e) {
  const int x_lo = std::max(0, static_cast<int>(std::floor(e.cx - e.rx)));
  const int x_hi = std::min(mask.width - 1, static_cast<int>(std::ceil(e.cx + e.rx)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(e.cy - e.ry)));
  const int y_hi = std::min(mask.height - 1, static_cast<int>(std::ceil(e.cy + e.ry)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x)
      if (e.contains(static_cast<float>(x), static_cast<float>(y))) mask.set(x, y, true);
}

void paint_stroke(HuSlice& img, BitMask& vessel_mask, const Segment& s, float radius, float hu) {
  const float r2 = radius * radius;
  const int x_lo = std::max(0, static_cast<int>(std::floor(std::min(s.x0, s.x1) - radius)));
  const int x_hi =
      std::min(img.width - 1, static_cast<int>(std::ceil(std::max(s.x0, s.x1) + radius)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(std::min(s.y0, s.y1) - radius)));
  const int y_hi =
      std::min(img.height - 1, static_cast<int>(std::ceil(std::max(s.y0, s.y1) + radius)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x)
      if (s.dist2(static_cast<float>(x), static_cast<float>(y)) <= r2) {
        img.at(x, y) = hu;
        vessel_mask.set(x, y, true);
      }
}

void paint_disc(HuSlice& img, BitMask* mask, float cx, float cy, float radius, float hu) {
  const float r2 = radius * radius;
  const int x_lo = std::max(0, static_cast<int>(std::floor(cx - radius)));
  const int x_hi = std::min(img.width - 1, static_cast<int>(std::ceil(cx + radius)));
  const int y_lo = std::max(0, static_cast<int>(std::floor(cy - radius)));
  const int y_hi = std::min(img.height - 1, static_cast<int>(std::ceil(cy + radius)));
  for (int y = y_lo; y <= y_hi; ++y)
    for (int x = x_lo; x <= x_hi; ++x) {
      const float dx = x - cx, dy = y - cy;
      if (dx * dx + dy * dy <= r2) {
        img.at(x, y) = hu;
        if (mask) mask->set(x, y, true);
      }
    }
}

// Uniform point inside an ellipse shrunk by `shrink` (fraction of the axes).
void sample_in_ellipse(Rng& rng, const Ellipse& e, float shrink, float& x, float& y) {
  const double r = std::sqrt(rng.uniform());
  const double theta = rng.uniform() * 2.0 * 3.14159265358979323846;
  x = e.cx + static_cast<float>(r * std::cos(theta)) * e.rx * shrink;
  y = e.cy + static_cast<float>(r * std::sin(theta)) * e.ry * shrink;
}

}  // namespace

PhantomSlice generate_phantom_slice(const PhantomSpec& spec) {
  Rng rng(spec.seed);
  const float scale = static_cast<float>(spec.width) / 512.0f;
  const float cx = spec.width / 2.0f;
  const float cy = spec.height / 2.0f + 4.0f * scale;

  PhantomSlice out;
  out.image = HuSlice(spec.width, spec.height);
  std::fill(out.image.hu.begin(), out.image.hu.end(), kAirHu);
  out.truth.lung = BitMask(spec.width, spec.height);
  out.truth.lesion = BitMask(spec.width, spec.height);
  out.truth.label = spec.label;

  // Body over air.
  const Ellipse body{cx + static_cast<float>(rng.uniform(-8, 8)) * scale,
                     cy + static_cast<float>(rng.uniform(-8, 8)) * scale,
                     static_cast<float>(rng.uniform(175, 190)) * scale,
                     static_cast<float>(rng.uniform(128, 145)) * scale};
  paint_ellipse(out.image, body, kSoftTissueHu);

  // Two lungs inside the body, separated by a mediastinal gap. The sampled
  // height shrinks until the whole ellipse verifiably fits inside the body
  // with margin, so outside air can never connect into a lung.
  const float lung_rx = static_cast<float>(rng.uniform(55, 70)) * scale;
  float lung_ry = static_cast<float>(rng.uniform(80, 110)) * scale;
  const float dx_min = lung_rx + 8.0f * scale;
  const float dx_max = body.rx - lung_rx - 14.0f * scale;
  const float lung_dx = static_cast<float>(rng.uniform(dx_min, dx_max));
  Ellipse lungs[2];
  for (int i = 0; i < 2; ++i) {
    lungs[i] = Ellipse{body.cx + (i == 0 ? -lung_dx : lung_dx),
                       body.cy + static_cast<float>(rng.uniform(-10, 10)) * scale, lung_rx,
                       lung_ry};
    while (!ellipse_inside(lungs[i], body, 10.0f * scale) && lungs[i].ry > 50.0f * scale)
      lungs[i].ry -= 2.0f * scale;
    paint_ellipse(out.image, lungs[i], kLungHu);
    mask_ellipse(out.truth.lung, lungs[i]);
  }

  // Vessel strokes, kept interior so the lung boundary stays intact.
  BitMask vessel_mask(spec.width, spec.height);
  std::vector<Segment> strokes[2];
  for (int i = 0; i < 2; ++i) {
    const int n = rng.range_int(3, 5);
    for (int k = 0; k < n; ++k) {
      Segment s;
      sample_in_ellipse(rng, lungs[i], 0.72f, s.x0, s.y0);
      sample_in_ellipse(rng, lungs[i], 0.72f, s.x1, s.y1);
      const float radius = static_cast<float>(rng.uniform(1.0, 1.8)) * scale;
      paint_stroke(out.image, vessel_mask, s, radius, kVesselHu);
      strokes[i].push_back(s);
    }
  }

  if (spec.label == SliceLabel::PE) {
    // A vessel bulge with a dark filling defect at its core.
    const float bulge_r =
        static_cast<float>(rng.uniform(spec.pe_bulge_radius_min, spec.pe_bulge_radius_max)) *
        scale;
    const float core_r = std::max(2.0f * scale, bulge_r - spec.pe_core_shrink * scale);
    float px = lungs[0].cx, py = lungs[0].cy;
    for (int attempt = 0; attempt < 64; ++attempt) {
      const int li = rng.range_int(0, 1);
      const Segment& s = strokes[li][static_cast<std::size_t>(
          rng.range_int(0, static_cast<int>(strokes[li].size()) - 1))];
      const float t = static_cast<float>(rng.uniform(0.3, 0.7));
      const float qx = s.x0 + t * (s.x1 - s.x0);
      const float qy = s.y0 + t * (s.y1 - s.y0);
      if (lungs[li].fits_disc(qx, qy, bulge_r + 3.0f * scale)) {
        px = qx;
        py = qy;
        break;
      }
    }
    paint_disc(out.image, nullptr, px, py, bulge_r, kVesselHu);
    paint_disc(out.image, &out.truth.lesion, px, py, core_r, kPeDefectHu);
  } else if (spec.label == SliceLabel::OtherDisease) {
    // Diffuse dense patch in parenchyma, away from vessels.
    const float pr =
        static_cast<float>(rng.uniform(spec.patch_radius_min, spec.patch_radius_max)) * scale;
    float px = lungs[1].cx, py = lungs[1].cy;
    int best_overlap = INT32_MAX;
    for (int attempt = 0; attempt < 32; ++attempt) {
      const int li = rng.range_int(0, 1);
      float qx, qy;
      sample_in_ellipse(rng, lungs[li], 0.7f, qx, qy);
      if (!lungs[li].fits_disc(qx, qy, pr + 3.0f * scale)) continue;
      int overlap = 0;
      for (const auto& side : strokes)
        for (const Segment& s : side)
          if (s.dist2(qx, qy) < (pr + 4.0f) * (pr + 4.0f)) ++overlap;
      if (overlap < best_overlap) {
        best_overlap = overlap;
        px = qx;
        py = qy;
        if (overlap == 0) break;
      }
    }
    const float r2 = pr * pr;
    for (int y = static_cast<int>(py - pr); y <= static_cast<int>(py + pr); ++y)
      for (int x = static_cast<int>(px - pr); x <= static_cast<int>(px + pr); ++x) {
        if (x < 0 || x >= spec.width || y < 0 || y >= spec.height) continue;
        const float dx = x - px, dy = y - py;
        if (dx * dx + dy * dy <= r2) {
          out.image.at(x, y) = static_cast<float>(rng.uniform(-100.0, 0.0));
          out.truth.lesion.set(x, y, true);
        }
      }
  }

  // Seeded acquisition noise over tissue; air stays clean. Values are rounded
  // to integers so the DICOM round trip is exact.
  for (int y = 0; y < spec.height; ++y)
    for (int x = 0; x < spec.width; ++x) {
      float v = out.image.at(x, y);
      if (v > kAirHu)
        v += static_cast<float>(rng.normal(0.0, spec.noise_sigma_hu));
      out.image.at(x, y) = std::clamp(std::round(v), kHuMin, kHuMax);
    }

  return out;
}

PhantomPatient generate_patient(std::uint64_t seed, SliceLabel label, int n_slices, int width,
                                int height) {
  Rng rng(seed);
  PhantomPatient patient;
  patient.patient_label = label;
  patient.slice_labels.assign(static_cast<std::size_t>(n_slices), SliceLabel::WNL);

  if (label != SliceLabel::WNL && n_slices > 0) {
    const double frac = rng.uniform(0.3, 0.6);
    const int span = std::clamp(static_cast<int>(std::lround(frac * n_slices)), 1, n_slices);
    const int start = rng.range_int(0, n_slices - span);
    for (int i = start; i < start + span; ++i)
      patient.slice_labels[static_cast<std::size_t>(i)] = label;
  }

  for (int i = 0; i < n_slices; ++i) {
    PhantomSpec spec;
    spec.seed = rng.fork(static_cast<std::uint64_t>(i)).next_u64();
    spec.label = patient.slice_labels[static_cast<std::size_t>(i)];
    spec.width = width;
    spec.height = height;
    patient.slices.push_back(generate_phantom_slice(spec));
  }
  return patient;
}

namespace {

void put_u16(std::vector<std::uint8_t>& out, std::uint16_t v) {
  out.push_back(static_cast<std::uint8_t>(v & 0xff));
  out.push_back(static_cast<std::uint8_t>(v >> 8));
}

void put_u32(std::vector<std::uint8_t>& out, std::uint32_t v) {
  put_u16(out, static_cast<std::uint16_t>(v & 0xffff));
  put_u16(out, static_cast<std::uint16_t>(v >> 16));
}

// One Explicit VR LE element with a short (2-byte) length field.
void put_element(std::vector<std::uint8_t>& out, std::uint16_t group, std::uint16_t element,
                 const char* vr, std::string value, char pad) {
  if (value.size() % 2) value.push_back(pad);
  put_u16(out, group);
  put_u16(out, element);
  out.push_back(static_cast<std::uint8_t>(vr[0]));
  out.push_back(static_cast<std::uint8_t>(vr[1]));
  put_u16(out, static_cast<std::uint16_t>(value.size()));
  out.insert(out.end(), value.begin(), value.end());
}

void put_us(std::vector<std::uint8_t>& out, std::uint16_t group, std::uint16_t element,
            std::uint16_t v) {
  put_u16(out, group);
  put_u16(out, element);
  out.push_back('U');
  out.push_back('S');
  put_u16(out, 2);
  put_u16(out, v);
}

}  // namespace

std::vector<std::uint8_t> encode_dicom(const HuSlice& slice, const DicomMeta& meta) {
  std::vector<std::uint8_t> out(128, 0);  // preamble
  out.push_back('D');
  out.push_back('I');
  out.push_back('C');
  out.push_back('M');

  // File meta group with its group-length element.
  std::vector<std::uint8_t> meta_body;
  put_element(meta_body, 0x0002, 0x0010, "UI", "1.2.840.10008.1.2.1", '\0');
  put_u16(out, 0x0002);
  put_u16(out, 0x0000);
  out.push_back('U');
  out.push_back('L');
  put_u16(out, 4);
  put_u32(out, static_cast<std::uint32_t>(meta_body.size()));
  out.insert(out.end(), meta_body.begin(), meta_body.end());

  put_element(out, 0x0010, 0x0020, "LO", meta.patient_id, ' ');
  put_element(out, 0x0020, 0x000E, "UI", meta.series_id, '\0');
  put_element(out, 0x0020, 0x0013, "IS", std::to_string(meta.instance_number), ' ');
  put_us(out, 0x0028, 0x0002, 1);  // SamplesPerPixel
  put_element(out, 0x0028, 0x0004, "CS", "MONOCHROME2", ' ');
  put_us(out, 0x0028, 0x0010, static_cast<std::uint16_t>(slice.height));
  put_us(out, 0x0028, 0x0011, static_cast<std::uint16_t>(slice.width));
  put_us(out, 0x0028, 0x0100, 16);  // BitsAllocated
  put_us(out, 0x0028, 0x0101, 16);  // BitsStored
  put_us(out, 0x0028, 0x0102, 15);  // HighBit
  put_us(out, 0x0028, 0x0103, 0);   // PixelRepresentation: unsigned
  put_element(out, 0x0028, 0x1052, "DS", "-1024", ' ');
  put_element(out, 0x0028, 0x1053, "DS", "1", ' ');

  const std::uint32_t n_bytes =
      static_cast<std::uint32_t>(slice.hu.size()) * 2;
  put_u16(out, 0x7FE0);
  put_u16(out, 0x0010);
  out.push_back('O');
  out.push_back('W');
  put_u16(out, 0);  // reserved
  put_u32(out, n_bytes);
  for (float hu : slice.hu) {
    const long stored = std::lround(hu) + 1024;
    put_u16(out, static_cast<std::uint16_t>(std::clamp(stored, 0L, 65535L)));
  }
  return out;
}

void write_dicom(const HuSlice& slice, const DicomMeta& meta, const std::string& path) {
  const std::vector<std::uint8_t> bytes = encode_dicom(slice, meta);
  std::ofstream out(path, std::ios::binary);
  if (!out) throw DicomError(DicomError::Kind::Truncated, "cannot open for write: " + path);
  out.write(reinterpret_cast<const char*>(bytes.data()),
            static_cast<std::streamsize>(bytes.size()));
  if (!out) throw DicomError(DicomError::Kind::Truncated, "short write: " + path);
}

namespace {

void write_rle(std::ostream& out, const BitMask& mask) {
  // Alternating run counts, beginning with a zero run (possibly of length 0).
  std::uint8_t current = 0;
  std::size_t run = 0;
  for (std::uint8_t b : mask.bits) {
    if ((b != 0) == (current != 0)) {
      ++run;
    } else {
      out << run << ' ';
      current = b;
      run = 1;
    }
  }
  out << run;
}

void read_rle(std::istringstream& in, BitMask& mask) {
  std::size_t pos = 0;
  std::uint8_t current = 0;
  std::size_t run = 0;
  while (in >> run) {
    if (pos + run > mask.bits.size()) throw std::runtime_error("ground truth RLE overflow");
    std::fill_n(mask.bits.begin() + static_cast<long>(pos), run, current);
    pos += run;
    current = current ? 0 : 1;
  }
  if (pos != mask.bits.size()) throw std::runtime_error("ground truth RLE underflow");
}

}  // namespace

void write_ground_truth(const GroundTruth& gt, const std::string& path) {
  std::ofstream out(path);
  if (!out) throw std::runtime_error("cannot open for write: " + path);
  out << "label " << label_str(gt.label) << "\n";
  out << "size " << gt.lung.width << ' ' << gt.lung.height << "\n";
  out << "lung ";
  write_rle(out, gt.lung);
  out << "\nlesion ";
  write_rle(out, gt.lesion);
  out << "\n";
}

GroundTruth read_ground_truth(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw std::runtime_error("cannot open " + path);
  GroundTruth gt;
  std::string line, key;
  int w = 0, h = 0;
  while (std::getline(in, line)) {
    std::istringstream ls(line);
    ls >> key;
    if (key == "label") {
      std::string v;
      ls >> v;
      gt.label = parse_label(v);
    } else if (key == "size") {
      ls >> w >> h;
      gt.lung = BitMask(w, h);
      gt.lesion = BitMask(w, h);
    } else if (key == "lung") {
      std::string rest;
      std::getline(ls, rest);
      std::istringstream rs(rest);
      read_rle(rs, gt.lung);
    } else if (key == "lesion") {
      std::string rest;
      std::getline(ls, rest);
      std::istringstream rs(rest);
      read_rle(rs, gt.lesion);
    }
  }
  if (w == 0 || h == 0) throw std::runtime_error("ground truth missing size: " + path);
  return gt;
}

}  // namespace ctt
