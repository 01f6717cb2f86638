#include "ctt/weights_io.hpp"

#include <bit>
#include <cstdint>
#include <cstring>
#include <fstream>
#include <sstream>
#include <vector>

namespace ctt {

namespace {

void put_le32(std::string& out, std::uint32_t v) {
  out.push_back(static_cast<char>(v & 0xff));
  out.push_back(static_cast<char>((v >> 8) & 0xff));
  out.push_back(static_cast<char>((v >> 16) & 0xff));
  out.push_back(static_cast<char>((v >> 24) & 0xff));
}

std::uint32_t get_le32(const unsigned char* p) {
  return static_cast<std::uint32_t>(p[0]) | (static_cast<std::uint32_t>(p[1]) << 8) |
         (static_cast<std::uint32_t>(p[2]) << 16) | (static_cast<std::uint32_t>(p[3]) << 24);
}

[[noreturn]] void corrupt(const std::string& why) {
  throw NnError(NnError::Kind::CorruptWeights, "weight file: " + why);
}

}  // namespace

void save_weights(const ParamStore& store, const std::string& path) {
  std::ostringstream header;
  header << "CTW1\n" << store.size() << "\n";
  std::string payload;
  std::size_t offset = 0;
  for (std::size_t i = 0; i < store.size(); ++i) {
    const auto& p = store.at(i);
    header << p.name << " f32 " << p.value.shape.size();
    for (int d : p.value.shape) header << " " << d;
    header << " " << offset << "\n";
    for (float v : p.value.data) put_le32(payload, std::bit_cast<std::uint32_t>(v));
    offset += p.value.numel() * 4;
  }
  header << "DATA\n";

  std::ofstream out(path, std::ios::binary);
  if (!out) throw NnError(NnError::Kind::CorruptWeights, "cannot open for write: " + path);
  const std::string h = header.str();
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  out.write(payload.data(), static_cast<std::streamsize>(payload.size()));
  if (!out) throw NnError(NnError::Kind::CorruptWeights, "short write: " + path);
}

ParamStore load_weights(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) corrupt("cannot open " + path);
  std::string contents((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

  std::istringstream hs(contents);
  std::string line;
  if (!std::getline(hs, line) || line != "CTW1") corrupt("bad magic");
  if (!std::getline(hs, line)) corrupt("missing tensor count");
  std::size_t count = 0;
  try {
    count = std::stoul(line);
  } catch (const std::exception&) {
    corrupt("bad tensor count");
  }

  struct Entry {
    std::string name;
    Shape shape;
    std::size_t offset;
  };
  std::vector<Entry> entries;
  entries.reserve(count);
  for (std::size_t i = 0; i < count; ++i) {
    if (!std::getline(hs, line)) corrupt("truncated manifest");
    std::istringstream ls(line);
    Entry e;
    std::string dtype;
    std::size_t rank = 0;
    if (!(ls >> e.name >> dtype >> rank)) corrupt("bad manifest line");
    if (dtype != "f32") corrupt("unsupported dtype " + dtype);
    e.shape.resize(rank);
    for (std::size_t d = 0; d < rank; ++d)
      if (!(ls >> e.shape[d]) || e.shape[d] <= 0) corrupt("bad shape");
    if (!(ls >> e.offset)) corrupt("bad offset");
    entries.push_back(std::move(e));
  }
  if (!std::getline(hs, line) || line != "DATA") corrupt("missing DATA separator");

  const std::size_t payload_start = static_cast<std::size_t>(hs.tellg());
  const std::size_t payload_size = contents.size() - payload_start;
  const auto* payload = reinterpret_cast<const unsigned char*>(contents.data()) + payload_start;

  ParamStore store;
  for (const auto& e : entries) {
    auto& p = store.add(e.name, e.shape);
    const std::size_t bytes = p.value.numel() * 4;
    if (e.offset + bytes > payload_size) corrupt("payload truncated at " + e.name);
    for (std::size_t i = 0; i < p.value.numel(); ++i)
      p.value.data[i] = std::bit_cast<float>(get_le32(payload + e.offset + i * 4));
  }
  return store;
}

void bind_weights(const ParamStore& loaded, ParamStore& target) {
  if (loaded.size() != target.size())
    throw NnError(NnError::Kind::IncompatibleWeights,
                  "tensor count mismatch: file has " + std::to_string(loaded.size()) +
                      ", model expects " + std::to_string(target.size()));
  for (std::size_t i = 0; i < target.size(); ++i) {
    auto& dst = target.at(i);
    if (!loaded.contains(dst.name))
      throw NnError(NnError::Kind::IncompatibleWeights, "missing tensor: " + dst.name);
    const auto& src = loaded.get(dst.name);
    if (src.value.shape != dst.value.shape)
      throw NnError(NnError::Kind::IncompatibleWeights,
                    "shape mismatch for " + dst.name + ": file " + shape_str(src.value.shape) +
                        " vs model " + shape_str(dst.value.shape));
    dst.value = src.value;
  }
}

}  // namespace ctt
