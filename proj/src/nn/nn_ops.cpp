#include "snas/nn_ops.hpp"

#include <array>
#include <cmath>
#include <stdexcept>

namespace snas {

namespace {

struct OpInfo {
    OpKind kind;
    std::string_view name;
};

constexpr std::array<OpInfo, 8> kOps{{
    {OpKind::sep_conv_3x3, "sep_conv_3x3"},
    {OpKind::sep_conv_5x5, "sep_conv_5x5"},
    {OpKind::dil_conv_3x3, "dil_conv_3x3"},
    {OpKind::dil_conv_5x5, "dil_conv_5x5"},
    {OpKind::max_pool_3x3, "max_pool_3x3"},
    {OpKind::avg_pool_3x3, "avg_pool_3x3"},
    {OpKind::skip, "skip"},
    {OpKind::zero, "zero"},
}};

std::size_t kernel_of(OpKind kind) {
    switch (kind) {
        case OpKind::sep_conv_5x5:
        case OpKind::dil_conv_5x5:
            return 5;
        default:
            return 3;
    }
}

}  // namespace

std::string_view op_name(OpKind kind) {
    return kOps[static_cast<std::size_t>(kind)].name;
}

std::optional<OpKind> parse_op(std::string_view name) {
    for (const auto& info : kOps) {
        if (info.name == name) return info.kind;
    }
    return std::nullopt;
}

std::vector<OpKind> full_op_set() {
    std::vector<OpKind> out;
    for (const auto& info : kOps) out.push_back(info.kind);
    return out;
}

std::vector<OpKind> reduced_op_set() {
    return {OpKind::sep_conv_3x3, OpKind::avg_pool_3x3, OpKind::skip, OpKind::zero};
}

bool is_conv(OpKind kind) {
    return kind == OpKind::sep_conv_3x3 || kind == OpKind::sep_conv_5x5 ||
           kind == OpKind::dil_conv_3x3 || kind == OpKind::dil_conv_5x5;
}

bool is_pool(OpKind kind) {
    return kind == OpKind::max_pool_3x3 || kind == OpKind::avg_pool_3x3;
}

OpCost conv_layer_cost(const ConvLayer& layer, std::uint64_t h, std::uint64_t w) {
    const std::uint64_t params = layer.f * layer.k * layer.in * layer.out / layer.groups;
    return OpCost{params, h * w * params, h * w * (layer.in + layer.out) + params};
}

std::vector<ConvLayer> conv_layers(OpKind kind, std::uint64_t in, std::uint64_t out,
                                   std::uint64_t stride) {
    const std::uint64_t k = kernel_of(kind);
    switch (kind) {
        case OpKind::sep_conv_3x3:
        case OpKind::sep_conv_5x5:
            return {{k, k, in, in, in}, {1, 1, in, in, 1}, {k, k, in, in, in}, {1, 1, in, out, 1}};
        case OpKind::dil_conv_3x3:
        case OpKind::dil_conv_5x5:
            return {{k, k, in, in, in}, {1, 1, in, out, 1}};
        case OpKind::skip:
            if (stride != 1 || in != out) return {{1, 1, in, out, 1}};
            return {};
        default:
            return {};
    }
}

OpCost op_cost(OpKind kind, std::uint64_t h, std::uint64_t w, std::uint64_t in, std::uint64_t out,
               std::uint64_t stride) {
    if (kind == OpKind::zero) return {};
    if (is_pool(kind)) {
        return OpCost{0, h * w * 3 * 3 * in * out, h * w * (in + out)};
    }
    const auto layers = conv_layers(kind, in, out, stride);
    if (kind == OpKind::skip && layers.empty()) return OpCost{0, 0, h * w * (in + out)};
    OpCost total;
    for (const auto& layer : layers) total += conv_layer_cost(layer, h, w);
    return total;
}

namespace {
thread_local BnMode g_bn_mode = BnMode::batch;
}  // namespace

BnMode bn_mode() {
    return g_bn_mode;
}

BnModeScope::BnModeScope(BnMode mode) : previous_(g_bn_mode) {
    g_bn_mode = mode;
}

BnModeScope::~BnModeScope() {
    g_bn_mode = previous_;
}

template <typename T>
BnLayer<T>::BnLayer(std::size_t channels, ParamStore<T>& params, const std::string& prefix)
    : gamma(params.add(prefix + ".gamma", Tensor<T>(Shape{channels}, T(1)))),
      beta(params.add(prefix + ".beta", Tensor<T>(Shape{channels}, T(0)))),
      running_mean(params.add_buffer(prefix + ".running_mean", Tensor<T>(Shape{channels}, T(0)))),
      running_var(params.add_buffer(prefix + ".running_var", Tensor<T>(Shape{channels}, T(1)))) {}

template <typename T>
Tensor<T> BnLayer<T>::forward(const Tensor<T>& x) const {
    if (bn_mode() == BnMode::running) return batch_norm_fixed(x, gamma, beta, running_mean, running_var);
    if (active_tape<T>() != nullptr) {
        Tensor<T> mean = running_mean, var = running_var;
        update_running_stats(x, mean, var, kBnMomentum);
    }
    return batch_norm(x, gamma, beta);
}

template <typename T>
Tensor<T> init_conv_weight(std::size_t out, std::size_t in_per_group, std::size_t kernel, Rng& rng) {
    Tensor<T> w(Shape{out, in_per_group, kernel, kernel});
    const double stddev = std::sqrt(2.0 / static_cast<double>(in_per_group * kernel * kernel));
    for (auto& v : w.data()) v = static_cast<T>(stddev * standard_normal(rng));
    return w;
}

template <typename T>
CandidateOp<T>::CandidateOp(OpKind kind, OpGeometry geometry, ParamStore<T>& params,
                            const std::string& prefix, Rng& rng)
    : kind_(kind), geometry_(geometry) {
    if (geometry.c_in == 0 || geometry.c_out == 0 || (geometry.stride != 1 && geometry.stride != 2)) {
        throw std::invalid_argument("candidate op " + std::string(op_name(kind)) + ": bad geometry " +
                                    std::to_string(geometry.c_in) + "->" + std::to_string(geometry.c_out) +
                                    " stride " + std::to_string(geometry.stride));
    }
    if (is_pool(kind) && geometry.c_in != geometry.c_out) {
        throw std::invalid_argument("pooling cannot change channels: " + std::to_string(geometry.c_in) +
                                    "->" + std::to_string(geometry.c_out));
    }
    const std::size_t k = kernel_of(kind);
    const std::size_t cin = geometry.c_in, cout = geometry.c_out;
    int layer = 0;
    auto conv = [&](std::size_t out_ch, std::size_t groups, std::size_t kernel, Conv2dOptions opt) {
        const std::string name = prefix + ".conv" + std::to_string(layer++);
        stages_.push_back(Conv{params.add(name, init_conv_weight<T>(out_ch, cin / groups, kernel, rng)), opt});
    };
    auto bn = [&](std::size_t channels) {
        stages_.push_back(BnLayer<T>(channels, params, prefix + ".bn" + std::to_string(layer - 1)));
    };
    const std::size_t s = geometry.stride;
    switch (kind) {
        case OpKind::sep_conv_3x3:
        case OpKind::sep_conv_5x5:
            stages_.push_back(Relu{});
            conv(cin, cin, k, {s, k / 2, 1, cin});
            conv(cin, 1, 1, {});
            bn(cin);
            stages_.push_back(Relu{});
            conv(cin, cin, k, {1, k / 2, 1, cin});
            conv(cout, 1, 1, {});
            bn(cout);
            break;
        case OpKind::dil_conv_3x3:
        case OpKind::dil_conv_5x5:
            stages_.push_back(Relu{});
            conv(cin, cin, k, {s, 2 * (k / 2), 2, cin});
            conv(cout, 1, 1, {});
            bn(cout);
            break;
        case OpKind::skip:
            if (s != 1 || cin != cout) {
                stages_.push_back(Relu{});
                conv(cout, 1, 1, {s, 0, 1, 1});
                bn(cout);
            }
            break;
        default:
            break;
    }
}

template <typename T>
Shape CandidateOp<T>::output_shape(const Shape& input) const {
    if (input.size() != 4 || input[1] != geometry_.c_in) {
        throw ShapeError(std::string(op_name(kind_)) + ": input " + to_string(input) +
                         " does not carry " + std::to_string(geometry_.c_in) + " channels");
    }
    const std::size_t s = geometry_.stride;
    return Shape{input[0], geometry_.c_out, conv_output_size(input[2], 3, s, 1),
                 conv_output_size(input[3], 3, s, 1)};
}

template <typename T>
Tensor<T> CandidateOp<T>::forward(const Tensor<T>& x) const {
    const Shape out_shape = output_shape(x.shape());
    switch (kind_) {
        case OpKind::zero:
            return Tensor<T>::zeros(out_shape);
        case OpKind::max_pool_3x3:
            return max_pool2d(x, Pool2dOptions{3, geometry_.stride, 1});
        case OpKind::avg_pool_3x3:
            return avg_pool2d(x, Pool2dOptions{3, geometry_.stride, 1});
        default:
            break;
    }
    Tensor<T> h = x;
    for (const auto& stage : stages_) {
        if (std::holds_alternative<Relu>(stage)) {
            h = relu(h);
        } else if (const auto* c = std::get_if<Conv>(&stage)) {
            h = conv2d(h, c->weight, c->options);
        } else {
            h = std::get<BnLayer<T>>(stage).forward(h);
        }
    }
    return h;
}

template <typename T>
ReluConvBn<T>::ReluConvBn(std::size_t c_in, std::size_t c_out, std::size_t kernel, std::size_t stride,
                          std::size_t padding, bool leading_relu, ParamStore<T>& params,
                          const std::string& prefix, Rng& rng)
    : leading_relu_(leading_relu), options_{stride, padding, 1, 1} {
    weight_ = params.add(prefix + ".conv", init_conv_weight<T>(c_out, c_in, kernel, rng));
    bn_ = BnLayer<T>(c_out, params, prefix + ".bn");
}

template <typename T>
Tensor<T> ReluConvBn<T>::forward(const Tensor<T>& x) const {
    Tensor<T> h = leading_relu_ ? relu(x) : x;
    return bn_.forward(conv2d(h, weight_, options_));
}

template struct BnLayer<float>;
template struct BnLayer<double>;
template class CandidateOp<float>;
template class CandidateOp<double>;
template class ReluConvBn<float>;
template class ReluConvBn<double>;
template Tensor<float> init_conv_weight<float>(std::size_t, std::size_t, std::size_t, Rng&);
template Tensor<double> init_conv_weight<double>(std::size_t, std::size_t, std::size_t, Rng&);

}  // namespace snas
