#include "iocseq/checkpoint.hpp"

#include <cstring>
#include <fstream>

#include "iocseq/common.hpp"

namespace iocseq::nd {

namespace {

constexpr char kMagic[4] = {'I', 'O', 'C', 'S'};

void put_u16(std::string& out, uint16_t v) {
    out.push_back(static_cast<char>(v & 0xff));
    out.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& out, uint32_t v) {
    for (int i = 0; i < 4; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& out, uint64_t v) {
    for (int i = 0; i < 8; ++i) out.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

struct Reader {
    const std::string& buf;
    size_t pos = 0;

    void need(size_t n) const {
        require(pos + n <= buf.size(), "checkpoint: truncated file (need ", n, " bytes at ", pos,
                ")");
    }
    uint16_t u16() {
        need(2);
        uint16_t v = static_cast<uint8_t>(buf[pos]) | (static_cast<uint16_t>(static_cast<uint8_t>(buf[pos + 1])) << 8);
        pos += 2;
        return v;
    }
    uint32_t u32() {
        need(4);
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i) v |= static_cast<uint32_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 4;
        return v;
    }
    uint64_t u64() {
        need(8);
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i) v |= static_cast<uint64_t>(static_cast<uint8_t>(buf[pos + i])) << (8 * i);
        pos += 8;
        return v;
    }
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(buf[pos++]);
    }
    std::string bytes(size_t n) {
        need(n);
        std::string s = buf.substr(pos, n);
        pos += n;
        return s;
    }
};

}  // namespace

std::string Checkpoint::meta(const std::string& key) const {
    auto it = metadata.find(key);
    require(it != metadata.end(), "checkpoint: missing metadata key '", key, "'");
    return it->second;
}

std::string Checkpoint::meta_or(const std::string& key, const std::string& fallback) const {
    auto it = metadata.find(key);
    return it == metadata.end() ? fallback : it->second;
}

void save_checkpoint(const Checkpoint& ckpt, const std::string& path) {
    std::string out;
    out.append(kMagic, 4);
    put_u32(out, kCheckpointVersion);
    put_u32(out, static_cast<uint32_t>(ckpt.tensors.size()));
    for (const auto& [name, t] : ckpt.tensors) {
        require(name.size() <= 0xffff, "checkpoint: tensor name too long: ", name);
        require(t.rank() <= 0xff, "checkpoint: tensor rank too large");
        put_u16(out, static_cast<uint16_t>(name.size()));
        out.append(name);
        out.push_back(static_cast<char>(t.rank()));
        for (int64_t d : t.shape) put_u64(out, static_cast<uint64_t>(d));
        // float32 little-endian payload
        for (float v : t.data) {
            uint32_t bits;
            std::memcpy(&bits, &v, 4);
            put_u32(out, bits);
        }
    }
    for (const auto& [k, v] : ckpt.metadata) {
        require(k.find('=') == std::string::npos && k.find('\n') == std::string::npos,
                "checkpoint: metadata key may not contain '=' or newline: ", k);
        require(v.find('\n') == std::string::npos,
                "checkpoint: metadata value may not contain newline: ", k);
        out.append(k);
        out.push_back('=');
        out.append(v);
        out.push_back('\n');
    }
    std::ofstream f(path, std::ios::binary | std::ios::trunc);
    require(f.good(), "checkpoint: cannot open '", path, "' for writing");
    f.write(out.data(), static_cast<std::streamsize>(out.size()));
    require(f.good(), "checkpoint: write failed for '", path, "'");
}

Checkpoint load_checkpoint(const std::string& path) {
    std::ifstream f(path, std::ios::binary);
    require(f.good(), "checkpoint: cannot open '", path, "'");
    std::string buf((std::istreambuf_iterator<char>(f)), std::istreambuf_iterator<char>());
    require(buf.size() >= 12 && std::memcmp(buf.data(), kMagic, 4) == 0,
            "checkpoint: '", path, "' is not an IOCS archive");
    Reader r{buf, 4};
    const uint32_t version = r.u32();
    require(version == kCheckpointVersion, "checkpoint: unsupported format version ", version);
    const uint32_t count = r.u32();
    Checkpoint ckpt;
    for (uint32_t i = 0; i < count; ++i) {
        const uint16_t name_len = r.u16();
        const std::string name = r.bytes(name_len);
        const uint8_t rank = r.u8();
        std::vector<int64_t> shape(rank);
        for (auto& d : shape) d = static_cast<int64_t>(r.u64());
        const int64_t n = Tensor::numel(shape);
        Tensor t(shape);
        r.need(static_cast<size_t>(n) * 4);
        for (int64_t j = 0; j < n; ++j) {
            uint32_t bits = 0;
            for (int b = 0; b < 4; ++b)
                bits |= static_cast<uint32_t>(static_cast<uint8_t>(buf[r.pos + static_cast<size_t>(j) * 4 + static_cast<size_t>(b)])) << (8 * b);
            std::memcpy(&t.data[static_cast<size_t>(j)], &bits, 4);
        }
        r.pos += static_cast<size_t>(n) * 4;
        require(ckpt.tensors.emplace(name, std::move(t)).second,
                "checkpoint: duplicate tensor '", name, "'");
    }
    // trailing metadata block
    while (r.pos < buf.size()) {
        const size_t eol = buf.find('\n', r.pos);
        require(eol != std::string::npos, "checkpoint: unterminated metadata line");
        const std::string line = buf.substr(r.pos, eol - r.pos);
        r.pos = eol + 1;
        if (line.empty()) continue;
        const size_t eq = line.find('=');
        require(eq != std::string::npos, "checkpoint: malformed metadata line: ", line);
        ckpt.metadata[line.substr(0, eq)] = line.substr(eq + 1);
    }
    return ckpt;
}

}  // namespace iocseq::nd
