// Flat binary container of named arrays, used for parameter and
// architecture checkpoints.
//
// Layout (all integers little-endian):
//   magic "SNASCKPT" | u32 version | u32 entry count
//   per entry: u32 name length | name bytes | u8 dtype (0 = f32, 1 = f64)
//              | u32 rank | u64 dims[rank] | raw little-endian values
#pragma once

#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <string>
#include <variant>
#include <vector>

#include "snas/tensor.hpp"

namespace snas {

inline constexpr char kCheckpointMagic[8] = {'S', 'N', 'A', 'S', 'C', 'K', 'P', 'T'};
inline constexpr std::uint32_t kCheckpointVersion = 1;

enum class DType : std::uint8_t { f32 = 0, f64 = 1 };

struct NamedArray {
    std::string name;
    Shape shape;
    std::variant<std::vector<float>, std::vector<double>> values;

    DType dtype() const { return values.index() == 0 ? DType::f32 : DType::f64; }
    /// Values widened to double.
    std::vector<double> as_double() const;
};

class CheckpointError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

std::vector<std::uint8_t> encode_checkpoint(std::span<const NamedArray> arrays);
std::vector<NamedArray> decode_checkpoint(std::span<const std::uint8_t> bytes);

/// Writes to a temporary sibling and renames it over `path`.
void write_checkpoint(const std::filesystem::path& path, std::span<const NamedArray> arrays);
std::vector<NamedArray> read_checkpoint(const std::filesystem::path& path);

template <typename T>
NamedArray to_named_array(const std::string& name, const Tensor<T>& t) {
    return NamedArray{name, t.shape(), std::vector<T>(t.data().begin(), t.data().end())};
}

/// Copies `array` into `t`, converting precision; shapes must agree.
template <typename T>
void assign_from(Tensor<T>& t, const NamedArray& array) {
    if (array.shape != t.shape()) {
        throw CheckpointError("checkpoint entry '" + array.name + "' has shape " +
                              to_string(array.shape) + ", expected " + to_string(t.shape()));
    }
    const auto values = array.as_double();
    auto dst = t.data();
    for (std::size_t i = 0; i < dst.size(); ++i) dst[i] = static_cast<T>(values[i]);
}

const NamedArray* find_array(std::span<const NamedArray> arrays, const std::string& name);

}  // namespace snas
