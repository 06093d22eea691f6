#pragma once

#include <map>
#include <string>
#include <utility>
#include <vector>

#include "core/tensor.hpp"

namespace dfkd {

// Flat container of named tensors, written as one checksummed binary file.
// Layout: 8-byte magic, entry count, then per entry name/shape/raw doubles,
// and a trailing FNV-1a hash of everything after the magic. Doubles are raw
// host (little-endian x86) bytes, so save/load round-trips are bit exact.
// Files are written to a temp path and renamed so readers never see a torn
// file.
struct BlobWriter {
    std::vector<std::pair<std::string, const Tensor*>> entries;
    std::vector<std::pair<std::string, Tensor>> owned; // for values built on the fly

    void add(const std::string& name, const Tensor& t) { entries.emplace_back(name, &t); }
    void add_owned(const std::string& name, Tensor t);
    void write(const std::string& path) const;
};

std::map<std::string, Tensor> blob_read(const std::string& path);

// Checksum of an existing blob file (same hash the reader verifies).
uint64_t blob_checksum(const std::string& path);

} // namespace dfkd
