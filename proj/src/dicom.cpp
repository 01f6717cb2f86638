#include "ctt/dicom.hpp"

#include <algorithm>
#include <fstream>
#include <optional>

namespace ctt {

namespace {

constexpr const char* kExplicitVrLittleEndian = "1.2.840.10008.1.2.1";

[[noreturn]] void fail(DicomError::Kind kind, const std::string& what) {
  throw DicomError(kind, what);
}

struct ByteReader {
  const std::uint8_t* data;
  std::size_t size;
  std::size_t pos = 0;

  std::size_t remaining() const { return size - pos; }

  void need(std::size_t n) const {
    if (n > remaining()) fail(DicomError::Kind::Truncated, "unexpected end of stream");
  }

  std::uint8_t u8() {
    need(1);
    return data[pos++];
  }
  std::uint16_t u16() {
    need(2);
    const std::uint16_t v =
        static_cast<std::uint16_t>(data[pos]) | (static_cast<std::uint16_t>(data[pos + 1]) << 8);
    pos += 2;
    return v;
  }
  std::uint32_t u32() {
    need(4);
    std::uint32_t v = 0;
    for (int i = 3; i >= 0; --i) v = (v << 8) | data[pos + static_cast<std::size_t>(i)];
    pos += 4;
    return v;
  }
  const std::uint8_t* span(std::size_t n) {
    need(n);
    const std::uint8_t* p = data + pos;
    pos += n;
    return p;
  }
  void skip(std::size_t n) {
    need(n);
    pos += n;
  }
};

std::string trim_value(const std::uint8_t* p, std::size_t n) {
  std::string s(reinterpret_cast<const char*>(p), n);
  while (!s.empty() && (s.back() == ' ' || s.back() == '\0')) s.pop_back();
  std::size_t start = 0;
  while (start < s.size() && s[start] == ' ') ++start;
  return s.substr(start);
}

struct Element {
  std::uint16_t group;
  std::uint16_t element;
  std::string vr;
  const std::uint8_t* value;
  std::size_t length;

  std::uint32_t tag() const {
    return (static_cast<std::uint32_t>(group) << 16) | element;
  }
  std::string as_string() const { return trim_value(value, length); }
  std::uint16_t as_u16() const {
    if (length < 2) fail(DicomError::Kind::Truncated, "short US value");
    return static_cast<std::uint16_t>(value[0]) | (static_cast<std::uint16_t>(value[1]) << 8);
  }
  double as_decimal(const char* what) const {
    const std::string s = as_string();
    try {
      std::size_t used = 0;
      const double v = std::stod(s, &used);
      if (used == 0) throw std::invalid_argument(s);
      return v;
    } catch (const std::exception&) {
      fail(DicomError::Kind::Truncated, std::string("unparsable numeric value for ") + what);
    }
  }
  int as_int(const char* what) const {
    const std::string s = as_string();
    try {
      return std::stoi(s);
    } catch (const std::exception&) {
      fail(DicomError::Kind::Truncated, std::string("unparsable integer value for ") + what);
    }
  }
};

bool vr_has_long_length(const std::string& vr) {
  return vr == "OB" || vr == "OW" || vr == "OF" || vr == "SQ" || vr == "UT" || vr == "UN";
}

// Reads one Explicit VR Little Endian element.
Element read_element(ByteReader& r) {
  Element e;
  e.group = r.u16();
  e.element = r.u16();
  const std::uint8_t v0 = r.u8();
  const std::uint8_t v1 = r.u8();
  if (v0 < 'A' || v0 > 'Z' || v1 < 'A' || v1 > 'Z')
    fail(DicomError::Kind::Truncated, "invalid VR bytes; not Explicit VR Little Endian data");
  e.vr = std::string(1, static_cast<char>(v0)) + static_cast<char>(v1);
  std::uint32_t length = 0;
  if (vr_has_long_length(e.vr)) {
    r.skip(2);
    length = r.u32();
  } else {
    length = r.u16();
  }
  if (length == 0xFFFFFFFFu)
    fail(DicomError::Kind::UnsupportedTransferSyntax,
         "undefined-length elements are not supported");
  e.value = r.span(length);
  e.length = length;
  return e;
}

}  // namespace

DicomSlice parse_dicom(const std::vector<std::uint8_t>& bytes) {
  ByteReader r{bytes.data(), bytes.size()};
  if (bytes.size() < 132) fail(DicomError::Kind::MissingMagic, "file shorter than preamble");
  r.skip(128);
  const std::uint8_t* magic = r.span(4);
  if (!(magic[0] == 'D' && magic[1] == 'I' && magic[2] == 'C' && magic[3] == 'M'))
    fail(DicomError::Kind::MissingMagic, "missing DICM magic at offset 128");

  DicomSlice slice;
  std::optional<int> rows, cols, bits, pixel_rep;
  std::optional<std::string> transfer_syntax, photometric;
  const std::uint8_t* pixel_data = nullptr;
  std::size_t pixel_length = 0;
  bool transfer_syntax_checked = false;

  while (r.remaining() > 0) {
    const Element e = read_element(r);
    if (e.group != 0x0002 && !transfer_syntax_checked) {
      // File meta group ends here; the dataset must be Explicit VR LE.
      if (!transfer_syntax)
        fail(DicomError::Kind::UnsupportedTransferSyntax, "missing TransferSyntaxUID");
      if (*transfer_syntax != kExplicitVrLittleEndian)
        fail(DicomError::Kind::UnsupportedTransferSyntax,
             "unsupported transfer syntax " + *transfer_syntax);
      transfer_syntax_checked = true;
    }
    switch (e.tag()) {
      case 0x00020010:
        transfer_syntax = e.as_string();
        break;
      case 0x00100020:
        slice.patient_id = e.as_string();
        break;
      case 0x0020000E:
        slice.series_id = e.as_string();
        break;
      case 0x00200013:
        slice.instance_number = e.as_int("InstanceNumber");
        break;
      case 0x00280004:
        photometric = e.as_string();
        break;
      case 0x00280010:
        rows = e.as_u16();
        break;
      case 0x00280011:
        cols = e.as_u16();
        break;
      case 0x00280100:
        bits = e.as_u16();
        break;
      case 0x00280103:
        pixel_rep = e.as_u16();
        break;
      case 0x00281052:
        slice.rescale_intercept = e.as_decimal("RescaleIntercept");
        break;
      case 0x00281053:
        slice.rescale_slope = e.as_decimal("RescaleSlope");
        break;
      case 0x7FE00010:
        pixel_data = e.value;
        pixel_length = e.length;
        break;
      default:
        break;  // tags outside the supported set are skipped
    }
  }

  if (!transfer_syntax_checked) {
    if (!transfer_syntax)
      fail(DicomError::Kind::UnsupportedTransferSyntax, "missing TransferSyntaxUID");
    if (*transfer_syntax != kExplicitVrLittleEndian)
      fail(DicomError::Kind::UnsupportedTransferSyntax,
           "unsupported transfer syntax " + *transfer_syntax);
  }
  if (!rows) fail(DicomError::Kind::MissingRequiredTag, "missing Rows");
  if (!cols) fail(DicomError::Kind::MissingRequiredTag, "missing Columns");
  if (!pixel_data) fail(DicomError::Kind::MissingRequiredTag, "missing PixelData");
  if (*rows <= 0 || *cols <= 0)
    fail(DicomError::Kind::MissingRequiredTag, "degenerate Rows/Columns");
  if (bits && *bits != 16)
    fail(DicomError::Kind::UnsupportedTransferSyntax,
         "unsupported BitsAllocated " + std::to_string(*bits));
  if (photometric && *photometric != "MONOCHROME2")
    fail(DicomError::Kind::UnsupportedTransferSyntax,
         "unsupported photometric interpretation " + *photometric);

  slice.rows = *rows;
  slice.cols = *cols;
  slice.bits_allocated = bits.value_or(16);
  slice.pixel_representation = pixel_rep.value_or(0) == 1 ? PixelRepresentation::Signed
                                                          : PixelRepresentation::Unsigned;

  const std::uint64_t expected =
      static_cast<std::uint64_t>(*rows) * static_cast<std::uint64_t>(*cols) * 2;
  if (pixel_length != expected)
    fail(DicomError::Kind::PixelLengthMismatch,
         "PixelData length " + std::to_string(pixel_length) + " != rows*cols*2 = " +
             std::to_string(expected));

  slice.stored_pixels.resize(static_cast<std::size_t>(*rows) * *cols);
  for (std::size_t i = 0; i < slice.stored_pixels.size(); ++i)
    slice.stored_pixels[i] = static_cast<std::uint16_t>(pixel_data[2 * i]) |
                             (static_cast<std::uint16_t>(pixel_data[2 * i + 1]) << 8);
  return slice;
}

HuSlice to_hu(const DicomSlice& slice) {
  HuSlice out(slice.cols, slice.rows);
  for (std::size_t i = 0; i < slice.stored_pixels.size(); ++i) {
    const double stored = slice.pixel_representation == PixelRepresentation::Signed
                              ? static_cast<double>(static_cast<std::int16_t>(slice.stored_pixels[i]))
                              : static_cast<double>(slice.stored_pixels[i]);
    const double hu = stored * slice.rescale_slope + slice.rescale_intercept;
    out.hu[i] = static_cast<float>(std::clamp(hu, static_cast<double>(kHuMin),
                                              static_cast<double>(kHuMax)));
  }
  return out;
}

std::vector<std::uint8_t> read_file_bytes(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) fail(DicomError::Kind::Truncated, "cannot open " + path);
  return std::vector<std::uint8_t>((std::istreambuf_iterator<char>(in)),
                                   std::istreambuf_iterator<char>());
}

SeriesVolume load_series(const std::vector<std::string>& paths) {
  if (paths.empty()) fail(DicomError::Kind::EmptySeries, "no files given");
  struct Parsed {
    DicomSlice slice;
  };
  std::vector<DicomSlice> parsed;
  parsed.reserve(paths.size());
  for (const auto& p : paths) parsed.push_back(parse_dicom(read_file_bytes(p)));

  SeriesVolume vol;
  vol.patient_id = parsed.front().patient_id;
  vol.series_id = parsed.front().series_id;
  for (const auto& s : parsed) {
    if (s.patient_id != vol.patient_id || s.series_id != vol.series_id)
      fail(DicomError::Kind::MixedSeries,
           "mixed patient/series ids: " + s.patient_id + "/" + s.series_id + " vs " +
               vol.patient_id + "/" + vol.series_id);
  }
  std::vector<std::size_t> order(parsed.size());
  for (std::size_t i = 0; i < order.size(); ++i) order[i] = i;
  std::sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) {
    return parsed[a].instance_number < parsed[b].instance_number;
  });
  for (std::size_t i = 0; i + 1 < order.size(); ++i)
    if (parsed[order[i]].instance_number == parsed[order[i + 1]].instance_number)
      fail(DicomError::Kind::DuplicateInstance,
           "duplicate instance number " + std::to_string(parsed[order[i]].instance_number));
  for (std::size_t i : order) {
    vol.instance_numbers.push_back(parsed[i].instance_number);
    vol.slices.push_back(to_hu(parsed[i]));
  }
  return vol;
}

}  // namespace ctt
