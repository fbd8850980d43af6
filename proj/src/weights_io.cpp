#include "swp/weights_io.hpp"

#include <algorithm>
#include <cstdio>
#include <cstring>
#include <fstream>

#include <zlib.h>

#include "swp/error.hpp"

namespace swp {

namespace {

constexpr char kMagic[4] = {'S', 'W', 'P', 'L'};
constexpr uint8_t kDtypeF32 = 1;

void put_u16(std::string& buf, uint16_t v) {
    buf.push_back(static_cast<char>(v & 0xff));
    buf.push_back(static_cast<char>((v >> 8) & 0xff));
}

void put_u32(std::string& buf, uint32_t v) {
    for (int i = 0; i < 4; ++i)
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_u64(std::string& buf, uint64_t v) {
    for (int i = 0; i < 8; ++i)
        buf.push_back(static_cast<char>((v >> (8 * i)) & 0xff));
}

void put_f32(std::string& buf, float f) {
    uint32_t v;
    std::memcpy(&v, &f, 4);
    put_u32(buf, v);
}

class Reader {
public:
    Reader(const std::string& data, const std::string& path) : data_(data), path_(path) {}

    uint16_t u16() { return static_cast<uint16_t>(u8() | (uint16_t(u8()) << 8)); }

    uint32_t u32() {
        uint32_t v = 0;
        for (int i = 0; i < 4; ++i)
            v |= uint32_t(u8()) << (8 * i);
        return v;
    }

    uint64_t u64() {
        uint64_t v = 0;
        for (int i = 0; i < 8; ++i)
            v |= uint64_t(u8()) << (8 * i);
        return v;
    }

    float f32() {
        uint32_t v = u32();
        float f;
        std::memcpy(&f, &v, 4);
        return f;
    }

    std::string bytes(size_t n) {
        need(n);
        std::string s = data_.substr(pos_, n);
        pos_ += n;
        return s;
    }

    size_t remaining() const { return data_.size() - pos_; }

private:
    uint8_t u8() {
        need(1);
        return static_cast<uint8_t>(data_[pos_++]);
    }

    void need(size_t n) {
        if (data_.size() - pos_ < n)
            throw IntegrityError("weight archive " + path_ + " is truncated");
    }

    const std::string& data_;
    const std::string path_;
    size_t pos_ = 0;
};

uint32_t crc_of(const std::string& buf, size_t len) {
    return static_cast<uint32_t>(
        ::crc32(0L, reinterpret_cast<const Bytef*>(buf.data()), static_cast<uInt>(len)));
}

} // namespace

void save_weights(const WeightMap& weights, const std::string& path) {
    std::string buf;
    buf.append(kMagic, 4);
    put_u32(buf, kWeightFormatVersion);
    put_u32(buf, static_cast<uint32_t>(weights.size()));
    for (const auto& [name, t] : weights.entries()) {
        if (name.size() > 0xffff)
            throw Error("weight name too long: " + name);
        put_u16(buf, static_cast<uint16_t>(name.size()));
        buf.append(name);
        buf.push_back(static_cast<char>(kDtypeF32));
        buf.push_back(static_cast<char>(t.rank()));
        for (int64_t d : t.dims())
            put_u64(buf, static_cast<uint64_t>(d));
        for (int64_t i = 0; i < t.numel(); ++i)
            put_f32(buf, t[i]);
    }
    put_u32(buf, crc_of(buf, buf.size()));

    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out)
        throw IoError("cannot open " + path + " for writing");
    out.write(buf.data(), static_cast<std::streamsize>(buf.size()));
    if (!out)
        throw IoError("short write to " + path);

    std::ofstream manifest(path + ".txt", std::ios::trunc);
    if (manifest) {
        for (const auto& [name, t] : weights.entries())
            manifest << name << " " << t.dims_str() << " "
                     << (is_trainable_param(name) ? "trainable" : "frozen") << "\n";
    }
}

WeightMap load_weights(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in)
        throw IoError("cannot open weight archive " + path);
    std::string data((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());

    if (data.size() < 16)
        throw IntegrityError("weight archive " + path + " is truncated");
    const uint32_t stored_crc =
        static_cast<uint8_t>(data[data.size() - 4]) |
        (uint32_t(static_cast<uint8_t>(data[data.size() - 3])) << 8) |
        (uint32_t(static_cast<uint8_t>(data[data.size() - 2])) << 16) |
        (uint32_t(static_cast<uint8_t>(data[data.size() - 1])) << 24);
    if (crc_of(data, data.size() - 4) != stored_crc)
        throw IntegrityError("weight archive " + path + " failed CRC check");

    Reader r(data, path);
    if (r.bytes(4) != std::string(kMagic, 4))
        throw IntegrityError("weight archive " + path + " has bad magic");
    const uint32_t version = r.u32();
    if (version != kWeightFormatVersion)
        throw IntegrityError("weight archive " + path + " has unsupported version " +
                             std::to_string(version));
    const uint32_t count = r.u32();

    WeightMap w;
    for (uint32_t e = 0; e < count; ++e) {
        const uint16_t name_len = r.u16();
        std::string name = r.bytes(name_len);
        const std::string dtype_rank = r.bytes(2);
        const uint8_t dtype = static_cast<uint8_t>(dtype_rank[0]);
        const uint8_t rank = static_cast<uint8_t>(dtype_rank[1]);
        if (dtype != kDtypeF32)
            throw Error("weight archive " + path + ": unsupported dtype code " +
                        std::to_string(dtype) + " for '" + name + "'");
        std::vector<int64_t> dims(rank);
        int64_t numel = 1;
        for (uint8_t i = 0; i < rank; ++i) {
            dims[i] = static_cast<int64_t>(r.u64());
            if (dims[i] < 1 || numel > (int64_t(1) << 40) / std::max<int64_t>(dims[i], 1))
                throw IntegrityError("weight archive " + path + ": bad extents for '" + name +
                                     "'");
            numel *= dims[i];
        }
        std::vector<float> vals(static_cast<size_t>(numel));
        for (int64_t i = 0; i < numel; ++i)
            vals[static_cast<size_t>(i)] = r.f32();
        w.add(std::move(name), Tensor(std::move(dims), std::move(vals)));
    }
    if (r.remaining() != 4)
        throw IntegrityError("weight archive " + path + " has trailing bytes");
    return w;
}

} // namespace swp
