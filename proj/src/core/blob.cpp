#include "core/blob.hpp"

#include <cstdint>
#include <cstring>
#include <filesystem>
#include <fstream>
#include <stdexcept>

#include "core/rng.hpp"

namespace dfkd {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'K', 'D', 'T', 'N', 'S', '1'};

class HashingWriter {
public:
    explicit HashingWriter(std::ofstream& os) : os_(os) {}
    void raw(const void* p, size_t len) { os_.write(static_cast<const char*>(p), static_cast<std::streamsize>(len)); }
    void hashed(const void* p, size_t len) {
        hash_ = fnv1a64(p, len, hash_);
        raw(p, len);
    }
    void u64(uint64_t v) { hashed(&v, sizeof(v)); }
    void u32(uint32_t v) { hashed(&v, sizeof(v)); }
    uint64_t hash() const { return hash_; }

private:
    std::ofstream& os_;
    uint64_t hash_ = 14695981039346656037ull;
};

class HashingReader {
public:
    explicit HashingReader(std::ifstream& is, const std::string& path) : is_(is), path_(path) {}
    void raw(void* p, size_t len) {
        is_.read(static_cast<char*>(p), static_cast<std::streamsize>(len));
        if (!is_) throw std::runtime_error("blob: truncated file " + path_);
    }
    void hashed(void* p, size_t len) {
        raw(p, len);
        hash_ = fnv1a64(p, len, hash_);
    }
    uint64_t u64() {
        uint64_t v;
        hashed(&v, sizeof(v));
        return v;
    }
    uint32_t u32() {
        uint32_t v;
        hashed(&v, sizeof(v));
        return v;
    }
    uint64_t hash() const { return hash_; }

private:
    std::ifstream& is_;
    std::string path_;
    uint64_t hash_ = 14695981039346656037ull;
};

} // namespace

void BlobWriter::add_owned(const std::string& name, Tensor t) {
    owned.emplace_back(name, std::move(t));
}

void BlobWriter::write(const std::string& path) const {
    std::string tmp = path + ".tmp";
    {
        std::ofstream os(tmp, std::ios::binary | std::ios::trunc);
        if (!os) throw std::runtime_error("blob: cannot open " + tmp + " for writing");
        HashingWriter w(os);
        w.raw(kMagic, sizeof(kMagic));
        std::vector<std::pair<std::string, const Tensor*>> all = entries;
        for (const auto& [name, t] : owned) all.emplace_back(name, &t);
        w.u64(static_cast<uint64_t>(all.size()));
        for (const auto& [name, t] : all) {
            w.u32(static_cast<uint32_t>(name.size()));
            w.hashed(name.data(), name.size());
            w.u32(static_cast<uint32_t>(t->rank()));
            for (int i = 0; i < t->rank(); ++i) w.u32(static_cast<uint32_t>(t->size(i)));
            w.hashed(t->data(), static_cast<size_t>(t->numel()) * sizeof(double));
        }
        uint64_t h = w.hash();
        w.raw(&h, sizeof(h));
        if (!os) throw std::runtime_error("blob: write failed for " + tmp);
    }
    std::filesystem::rename(tmp, path);
}

std::map<std::string, Tensor> blob_read(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("blob: cannot open " + path);
    HashingReader r(is, path);
    char magic[8];
    r.raw(magic, sizeof(magic));
    if (std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
        throw std::runtime_error("blob: " + path + " is not a tensor blob (bad magic)");
    uint64_t count = r.u64();
    std::map<std::string, Tensor> out;
    for (uint64_t e = 0; e < count; ++e) {
        uint32_t name_len = r.u32();
        if (name_len > 4096) throw std::runtime_error("blob: unreasonable name length in " + path);
        std::string name(name_len, '\0');
        r.hashed(name.data(), name_len);
        uint32_t rank = r.u32();
        if (rank > 8) throw std::runtime_error("blob: unreasonable rank in " + path);
        std::vector<int> shape(rank);
        for (uint32_t i = 0; i < rank; ++i) shape[i] = static_cast<int>(r.u32());
        Tensor t(shape);
        r.hashed(t.data(), static_cast<size_t>(t.numel()) * sizeof(double));
        out.emplace(std::move(name), std::move(t));
    }
    uint64_t expected = r.hash();
    uint64_t stored;
    r.raw(&stored, sizeof(stored));
    if (stored != expected)
        throw std::runtime_error("blob: checksum mismatch in " + path + " (file is corrupt or was modified)");
    return out;
}

uint64_t blob_checksum(const std::string& path) {
    std::ifstream is(path, std::ios::binary);
    if (!is) throw std::runtime_error("blob: cannot open " + path);
    std::vector<char> bytes((std::istreambuf_iterator<char>(is)), std::istreambuf_iterator<char>());
    if (bytes.size() < sizeof(uint64_t) + 8) throw std::runtime_error("blob: file too short " + path);
    uint64_t stored;
    std::memcpy(&stored, bytes.data() + bytes.size() - sizeof(uint64_t), sizeof(stored));
    return stored;
}

} // namespace dfkd
