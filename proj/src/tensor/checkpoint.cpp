#include "snas/checkpoint.hpp"

#include <algorithm>
#include <bit>
#include <cstring>
#include <fstream>
#include <iterator>

namespace snas {

std::vector<double> NamedArray::as_double() const {
    return std::visit([](const auto& v) { return std::vector<double>(v.begin(), v.end()); }, values);
}

namespace {

template <typename U>
void put_le(std::vector<std::uint8_t>& out, U value) {
    for (std::size_t i = 0; i < sizeof(U); ++i) out.push_back(static_cast<std::uint8_t>(value >> (8 * i)));
}

class Reader {
public:
    explicit Reader(std::span<const std::uint8_t> bytes) : bytes_(bytes) {}

    template <typename U>
    U get_le(const char* what) {
        need(sizeof(U), what);
        U value = 0;
        for (std::size_t i = 0; i < sizeof(U); ++i) value |= static_cast<U>(bytes_[pos_ + i]) << (8 * i);
        pos_ += sizeof(U);
        return value;
    }

    std::span<const std::uint8_t> take(std::size_t n, const char* what) {
        need(n, what);
        auto out = bytes_.subspan(pos_, n);
        pos_ += n;
        return out;
    }

    bool done() const { return pos_ == bytes_.size(); }

private:
    void need(std::size_t n, const char* what) const {
        if (bytes_.size() - pos_ < n) {
            throw CheckpointError(std::string("checkpoint truncated while reading ") + what);
        }
    }
    std::span<const std::uint8_t> bytes_;
    std::size_t pos_ = 0;
};

}  // namespace

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays) {
    std::vector<std::uint8_t> out(std::begin(kCheckpointMagic), std::end(kCheckpointMagic));
    put_le<std::uint32_t>(out, kCheckpointVersion);
    put_le<std::uint32_t>(out, static_cast<std::uint32_t>(arrays.size()));
    for (const auto& a : arrays) {
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.name.size()));
        out.insert(out.end(), a.name.begin(), a.name.end());
        out.push_back(static_cast<std::uint8_t>(a.dtype()));
        put_le<std::uint32_t>(out, static_cast<std::uint32_t>(a.shape.size()));
        for (auto d : a.shape) put_le<std::uint64_t>(out, d);
        std::visit(
            [&](const auto& v) {
                using V = typename std::decay_t<decltype(v)>::value_type;
                using Bits = std::conditional_t<sizeof(V) == 4, std::uint32_t, std::uint64_t>;
                for (V x : v) put_le<Bits>(out, std::bit_cast<Bits>(x));
            },
            a.values);
    }
    return out;
}

std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes) {
    Reader r(bytes);
    auto magic = r.take(sizeof(kCheckpointMagic), "magic");
    if (!std::equal(magic.begin(), magic.end(), std::begin(kCheckpointMagic))) {
        throw CheckpointError("not a checkpoint: bad magic");
    }
    const auto version = r.get_le<std::uint32_t>("version");
    if (version != kCheckpointVersion) {
        throw CheckpointError("unsupported checkpoint version " + std::to_string(version));
    }
    const auto count = r.get_le<std::uint32_t>("entry count");
    std::vector<NamedArray> arrays;
    for (std::uint32_t e = 0; e < count; ++e) {
        NamedArray a;
        const auto name_len = r.get_le<std::uint32_t>("name length");
        auto name = r.take(name_len, "name");
        a.name.assign(name.begin(), name.end());
        const auto dtype = r.get_le<std::uint8_t>("dtype");
        const auto rank = r.get_le<std::uint32_t>("rank");
        if (rank > 8) throw CheckpointError("entry '" + a.name + "' has implausible rank");
        for (std::uint32_t d = 0; d < rank; ++d) a.shape.push_back(r.get_le<std::uint64_t>("dims"));
        const std::size_t n = numel(a.shape);
        if (dtype == static_cast<std::uint8_t>(DType::f32)) {
            std::vector<float> v(n);
            for (auto& x : v) x = std::bit_cast<float>(r.get_le<std::uint32_t>("values"));
            a.values = std::move(v);
        } else if (dtype == static_cast<std::uint8_t>(DType::f64)) {
            std::vector<double> v(n);
            for (auto& x : v) x = std::bit_cast<double>(r.get_le<std::uint64_t>("values"));
            a.values = std::move(v);
        } else {
            throw CheckpointError("entry '" + a.name + "' has unknown dtype tag " + std::to_string(dtype));
        }
        arrays.push_back(std::move(a));
    }
    if (!r.done()) throw CheckpointError("trailing bytes after last checkpoint entry");
    return arrays;
}

void write_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays) {
    const auto bytes = encode_checkpoint(arrays);
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw CheckpointError("cannot open " + tmp.string() + " for writing");
        out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
        if (!out) throw CheckpointError("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw CheckpointError("cannot open checkpoint " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    try {
        return decode_checkpoint(bytes);
    } catch (const CheckpointError& e) {
        throw CheckpointError(path.string() + ": " + e.what());
    }
}

const NamedArray* find_array(std::span<const NamedArray> arrays, const std::string& name) {
    auto it = std::find_if(arrays.begin(), arrays.end(), [&](const NamedArray& a) { return a.name == name; });
    return it == arrays.end() ? nullptr : &*it;
}

}  // namespace snas
