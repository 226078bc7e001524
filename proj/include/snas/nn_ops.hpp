// Candidate operations selectable on a cell edge, and their static cost model.
#pragma once

#include <cstdint>
#include <optional>
#include <string>
#include <string_view>
#include <variant>
#include <vector>

#include "snas/ops.hpp"
#include "snas/param_store.hpp"
#include "snas/rng.hpp"
#include "snas/tensor.hpp"

namespace snas {

enum class OpKind : std::uint8_t {
    sep_conv_3x3,
    sep_conv_5x5,
    dil_conv_3x3,
    dil_conv_5x5,
    max_pool_3x3,
    avg_pool_3x3,
    skip,
    zero,
};

std::string_view op_name(OpKind kind);
std::optional<OpKind> parse_op(std::string_view name);

/// The eight-operation candidate list.
std::vector<OpKind> full_op_set();
/// {sep_conv_3x3, avg_pool_3x3, skip, zero}, for fast runs.
std::vector<OpKind> reduced_op_set();

bool is_conv(OpKind kind);
bool is_pool(OpKind kind);

/// Resource triple of one operation at one edge.
struct OpCost {
    std::uint64_t params = 0;
    std::uint64_t flops = 0;
    std::uint64_t mac = 0;

    OpCost& operator+=(const OpCost& o) {
        params += o.params;
        flops += o.flops;
        mac += o.mac;
        return *this;
    }
    friend bool operator==(const OpCost&, const OpCost&) = default;
};

/// A single convolution layer: kernel f x k, I input and O output channels,
/// g groups.
struct ConvLayer {
    std::uint64_t f, k, in, out, groups = 1;
};

/// params = fkIO/g, FLOPs = HW fkIO/g, MAC = HW(I+O) + fkIO/g, with H x W the
/// output resolution.
OpCost conv_layer_cost(const ConvLayer& layer, std::uint64_t h, std::uint64_t w);

/// Cost of `kind` producing an h x w output from `in` to `out` channels.
/// Composite convolutions sum over their constituent layers. A strided skip
/// is a 1x1 projection and costs as one.
OpCost op_cost(OpKind kind, std::uint64_t h, std::uint64_t w, std::uint64_t in, std::uint64_t out,
               std::uint64_t stride = 1);

/// Constituent convolution layers of `kind` (empty for parameter-free ops).
std::vector<ConvLayer> conv_layers(OpKind kind, std::uint64_t in, std::uint64_t out,
                                   std::uint64_t stride = 1);

struct OpGeometry {
    std::size_t c_in = 0;
    std::size_t c_out = 0;
    std::size_t stride = 1;
};

/// Which statistics BN layers normalize with. `batch` uses the current
/// batch and, while a tape is recording, also updates the running
/// statistics; `running` uses the running statistics.
enum class BnMode { batch, running };

BnMode bn_mode();

class BnModeScope {
public:
    explicit BnModeScope(BnMode mode);
    ~BnModeScope();
    BnModeScope(const BnModeScope&) = delete;
    BnModeScope& operator=(const BnModeScope&) = delete;

private:
    BnMode previous_;
};

inline constexpr double kBnMomentum = 0.1;

/// Affine batch normalization with running statistics.
template <typename T>
struct BnLayer {
    Tensor<T> gamma, beta, running_mean, running_var;

    BnLayer() = default;
    BnLayer(std::size_t channels, ParamStore<T>& params, const std::string& prefix);
    Tensor<T> forward(const Tensor<T>& x) const;
};

/// One operation instance with its own parameters. Convolutions run as
/// ReLU-Conv-BN; separable convolutions stack two depthwise+pointwise blocks.
template <typename T>
class CandidateOp {
public:
    CandidateOp(OpKind kind, OpGeometry geometry, ParamStore<T>& params, const std::string& prefix,
                Rng& rng);

    Tensor<T> forward(const Tensor<T>& x) const;

    OpKind kind() const { return kind_; }
    const OpGeometry& geometry() const { return geometry_; }
    Shape output_shape(const Shape& input) const;
    OpCost cost(std::size_t h_out, std::size_t w_out) const {
        return op_cost(kind_, h_out, w_out, geometry_.c_in, geometry_.c_out, geometry_.stride);
    }

private:
    struct Relu {};
    struct Conv {
        Tensor<T> weight;
        Conv2dOptions options;
    };
    using Stage = std::variant<Relu, Conv, BnLayer<T>>;

    OpKind kind_;
    OpGeometry geometry_;
    std::vector<Stage> stages_;
};

/// Applies a ReLU-Conv-BN stack: the shared building block for
/// preprocessing and the stem.
template <typename T>
class ReluConvBn {
public:
    ReluConvBn() = default;
    ReluConvBn(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
               std::size_t padding, bool leading_relu, ParamStore<T>& params, const std::string& prefix,
               Rng& rng);
    Tensor<T> forward(const Tensor<T>& x) const;

private:
    bool leading_relu_ = true;
    Tensor<T> weight_;
    BnLayer<T> bn_;
    Conv2dOptions options_;
};

/// Kaiming-normal initialised convolution weight.
template <typename T>
Tensor<T> init_conv_weight(std::size_t out, std::size_t in_per_group, std::size_t kernel, Rng& rng);

}  // namespace snas
