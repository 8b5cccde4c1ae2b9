#include <zlib.h>

#include <cstdio>
#include <cstring>

#include "madi/pipeline.hpp"

namespace madi {

namespace {

constexpr char kMagic[8] = {'D', 'F', 'A', '2', 'C', 'K', 'P', 'T'};
constexpr uint32_t kVersion = 1;

struct Writer {
    FILE* fp;
    const std::string& path;
    void bytes(const void* p, size_t n) {
        if (std::fwrite(p, 1, n, fp) != n) throw io_error("short write: " + path);
    }
    void u8(uint8_t x) { bytes(&x, 1); }
    void u16(uint16_t x) { bytes(&x, 2); }
    void u32(uint32_t x) { bytes(&x, 4); }
    void u64(uint64_t x) { bytes(&x, 8); }
    void f64(double x) { bytes(&x, 8); }
    void str(const std::string& s) {
        MADI_CHECK(s.size() < 65536, "name too long");
        u16(static_cast<uint16_t>(s.size()));
        bytes(s.data(), s.size());
    }
};

struct Reader {
    FILE* fp;
    const std::string& path;
    void bytes(void* p, size_t n) {
        if (std::fread(p, 1, n, fp) != n) throw io_error("truncated checkpoint: " + path);
    }
    uint8_t u8() {
        uint8_t x;
        bytes(&x, 1);
        return x;
    }
    uint16_t u16() {
        uint16_t x;
        bytes(&x, 2);
        return x;
    }
    uint32_t u32() {
        uint32_t x;
        bytes(&x, 4);
        return x;
    }
    uint64_t u64() {
        uint64_t x;
        bytes(&x, 8);
        return x;
    }
    double f64() {
        double x;
        bytes(&x, 8);
        return x;
    }
    std::string str() {
        const uint16_t n = u16();
        std::string s(n, '\0');
        bytes(s.data(), n);
        return s;
    }
};

}  // namespace

void save_checkpoint(const std::string& path, const ModelState& state,
                     const CheckpointMeta& meta) {
    FILE* fp = std::fopen(path.c_str(), "wb");
    if (!fp) throw io_error("cannot open for write: " + path);
    try {
        Writer w{fp, path};
        w.bytes(kMagic, 8);
        w.u32(kVersion);
        w.u32(static_cast<uint32_t>(meta.stage));
        w.u64(static_cast<uint64_t>(meta.step));
        w.u64(meta.seed);
        w.u32(static_cast<uint32_t>(state.lora.size()));
        for (const LoraSpec& ls : state.lora) {
            w.str(ls.target);
            w.u32(static_cast<uint32_t>(ls.rank));
            w.f64(ls.alpha);
        }
        w.u32(static_cast<uint32_t>(state.params.size()));
        std::vector<float> buf;
        for (const auto& [name, p] : state.params) {
            w.str(name);
            w.u8(static_cast<uint8_t>(p.value.rank()));
            for (int d : p.value.dims) w.u32(static_cast<uint32_t>(d));
            w.u8(p.frozen ? 1 : 0);
            buf.resize(p.value.size());
            for (size_t i = 0; i < buf.size(); ++i) buf[i] = static_cast<float>(p.value.v[i]);
            const uint32_t crc =
                crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), buf.size() * 4);
            w.u32(crc);
            w.bytes(buf.data(), buf.size() * 4);
        }
    } catch (...) {
        std::fclose(fp);
        throw;
    }
    if (std::fclose(fp) != 0) throw io_error("close failed: " + path);
}

std::pair<ModelState, CheckpointMeta> load_checkpoint(const std::string& path) {
    FILE* fp = std::fopen(path.c_str(), "rb");
    if (!fp) throw io_error("cannot open: " + path);
    try {
        Reader r{fp, path};
        char magic[8];
        r.bytes(magic, 8);
        if (std::memcmp(magic, kMagic, 8) != 0) throw io_error("bad checkpoint magic: " + path);
        if (r.u32() != kVersion) throw io_error("unsupported checkpoint version: " + path);
        CheckpointMeta meta;
        meta.stage = static_cast<int>(r.u32());
        meta.step = static_cast<long>(r.u64());
        meta.seed = r.u64();
        ModelState state;
        const uint32_t n_lora = r.u32();
        MADI_CHECK(n_lora < 1u << 16, "implausible attachment count");
        for (uint32_t i = 0; i < n_lora; ++i) {
            LoraSpec ls;
            ls.target = r.str();
            ls.rank = static_cast<int>(r.u32());
            ls.alpha = r.f64();
            state.lora.push_back(std::move(ls));
        }
        const uint32_t n_tensors = r.u32();
        MADI_CHECK(n_tensors < 1u << 20, "implausible tensor count");
        std::vector<float> buf;
        for (uint32_t i = 0; i < n_tensors; ++i) {
            const std::string name = r.str();
            const int rank = r.u8();
            MADI_CHECK(rank >= 1 && rank <= 4, "bad tensor rank in: " + path);
            std::vector<int> dims(rank);
            size_t count = 1;
            for (int d = 0; d < rank; ++d) {
                dims[d] = static_cast<int>(r.u32());
                MADI_CHECK(dims[d] > 0 && dims[d] <= (1 << 24), "bad tensor dim in: " + path);
                count *= static_cast<size_t>(dims[d]);
            }
            const bool frozen = r.u8() != 0;
            const uint32_t want_crc = r.u32();
            buf.resize(count);
            r.bytes(buf.data(), count * 4);
            const uint32_t got_crc =
                crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), count * 4);
            if (got_crc != want_crc)
                throw io_error("checkpoint corrupt (crc mismatch on " + name + "): " + path);
            ParamTensor& p = state.add(name, dims, frozen);
            for (size_t j = 0; j < count; ++j) p.value.v[j] = buf[j];
        }
        // Trailing garbage means the file is not what we wrote.
        uint8_t extra;
        if (std::fread(&extra, 1, 1, fp) == 1) throw io_error("trailing bytes: " + path);
        std::fclose(fp);
        return {std::move(state), meta};
    } catch (...) {
        std::fclose(fp);
        throw;
    }
}

}  // namespace madi
