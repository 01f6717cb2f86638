#pragma once

#include <string>

#include "ctt/params.hpp"

namespace ctt {

// Weight file format "CTW1": a text manifest (one line per tensor: name,
// dtype tag, rank, dims, byte offset into the payload) terminated by a DATA
// line, followed by raw little-endian 32-bit floats.
void save_weights(const ParamStore& store, const std::string& path);

// Loads every tensor in the file. Structural damage raises
// NnError{CorruptWeights}.
ParamStore load_weights(const std::string& path);

// Copies values from `loaded` into `target` by name. Missing names or shape
// mismatches raise NnError{IncompatibleWeights}.
void bind_weights(const ParamStore& loaded, ParamStore& target);

}  // namespace ctt
