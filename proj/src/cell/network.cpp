#include "snas/network.hpp"

#include <cmath>
#include <stdexcept>

#include "snas/ops.hpp"

namespace snas {

NetworkSpec::NetworkSpec(NetworkConfig config)
    : config_(std::move(config)),
      graph_(std::make_shared<const ParentGraph>(config_.num_intermediate, config_.candidates)) {
    if (config_.num_cells == 0 || config_.init_channels == 0 || config_.image_size == 0 ||
        config_.num_classes < 2 || config_.in_channels == 0) {
        throw std::invalid_argument("network: cells, channels, image size and input channels must be positive "
                                    "and at least two classes are needed");
    }
    const std::size_t n = config_.num_cells;
    std::size_t c = config_.init_channels;
    std::size_t c_prev_prev = c, c_prev = c;
    std::size_t size = config_.image_size;
    bool reduction_prev = false;
    for (std::size_t i = 0; i < n; ++i) {
        CellLayout layout;
        const bool reduce = config_.reduction_cells && (i == n / 3 || i == 2 * n / 3) && n >= 3;
        layout.type = reduce ? CellType::reduce : CellType::normal;
        if (reduce) c *= 2;
        layout.reduction_prev = reduction_prev;
        layout.c_prev_prev = c_prev_prev;
        layout.c_prev = c_prev;
        layout.channels = c;
        layout.in_size = size;
        layout.out_size = reduce ? conv_output_size(size, 3, 2, 1) : size;
        layouts_.push_back(layout);
        size = layout.out_size;
        c_prev_prev = c_prev;
        c_prev = c * config_.num_intermediate;
        reduction_prev = reduce;
    }
    head_channels_ = c_prev;
}

bool NetworkSpec::has_reduction() const {
    for (const auto& l : layouts_) {
        if (l.type == CellType::reduce) return true;
    }
    return false;
}

OpGeometry NetworkSpec::edge_geometry(std::size_t cell, std::size_t edge) const {
    const CellLayout& l = layout(cell);
    const Edge& e = graph_->edges().at(edge);
    const std::size_t stride = (l.type == CellType::reduce && e.from < ParentGraph::kNumInputs) ? 2 : 1;
    return OpGeometry{l.channels, l.channels, stride};
}

std::size_t NetworkSpec::edge_out_size(std::size_t cell, std::size_t) const {
    return layout(cell).out_size;
}

template <typename T>
Network<T>::Network(NetworkSpec spec, std::uint64_t seed) : spec_(std::move(spec)) {
    Rng rng(stream_seed(seed, 0x6e6574));
    const NetworkConfig& cfg = spec_.config();
    stem_weight_ = params_.add("stem.conv", init_conv_weight<T>(cfg.init_channels, cfg.in_channels, 3, rng));
    stem_bn_ = BnLayer<T>(cfg.init_channels, params_, "stem.bn");
    cells_.reserve(spec_.num_cells());
    for (std::size_t i = 0; i < spec_.num_cells(); ++i) {
        const CellLayout& l = spec_.layout(i);
        cells_.emplace_back(spec_.graph(), l.type, l.c_prev_prev, l.c_prev, l.channels, l.reduction_prev, params_,
                            "cell" + std::to_string(i), rng);
    }
    const std::size_t c = spec_.head_channels();
    Tensor<T> w(Shape{c, cfg.num_classes});
    const double bound = 1.0 / std::sqrt(static_cast<double>(c));
    std::uniform_real_distribution<double> dist(-bound, bound);
    for (auto& v : w.data()) v = static_cast<T>(dist(rng));
    classifier_weight_ = params_.add("classifier.weight", w);
    classifier_bias_ = params_.add("classifier.bias", Tensor<T>(Shape{cfg.num_classes}, T(0)));
}

template <typename T>
Tensor<T> Network<T>::stem(const Tensor<T>& images) const {
    const NetworkConfig& cfg = spec_.config();
    if (images.rank() != 4 || images.dim(1) != cfg.in_channels || images.dim(2) != cfg.image_size ||
        images.dim(3) != cfg.image_size) {
        throw ShapeError("network: images " + to_string(images.shape()) + " do not match (N," +
                         std::to_string(cfg.in_channels) + "," + std::to_string(cfg.image_size) + "," +
                         std::to_string(cfg.image_size) + ")");
    }
    return stem_bn_.forward(conv2d(images, stem_weight_, Conv2dOptions{1, 1, 1, 1}));
}

template <typename T>
Tensor<T> Network<T>::head(const Tensor<T>& features) const {
    return add_bias(matmul(global_avg_pool(features), classifier_weight_), classifier_bias_);
}

template <typename T>
Tensor<T> Network<T>::forward(const Tensor<T>& images, std::span<const Tensor<T>> masks,
                              NetworkTrace<T>* trace) const {
    if (masks.size() != cells_.size()) {
        throw std::invalid_argument("network forward: " + std::to_string(masks.size()) + " masks for " +
                                    std::to_string(cells_.size()) + " cells");
    }
    if (trace) trace->cells.assign(cells_.size(), CellTrace<T>{});
    Tensor<T> s0 = stem(images);
    Tensor<T> s1 = s0;
    for (std::size_t i = 0; i < cells_.size(); ++i) {
        Tensor<T> out = cells_[i].forward(s0, s1, masks[i], trace ? &trace->cells[i] : nullptr);
        s0 = s1;
        s1 = out;
    }
    Tensor<T> logits = head(s1);
    if (trace) trace->logits = logits;
    return logits;
}

template <typename T>
Tensor<T> Network<T>::forward_child(const Tensor<T>& images, const Genotype& genotype) const {
    Tensor<T> s0 = stem(images);
    Tensor<T> s1 = s0;
    for (const auto& cell : cells_) {
        Tensor<T> out = cell.forward_child(s0, s1, genotype.ops(cell.type()));
        s0 = s1;
        s1 = out;
    }
    return head(s1);
}

template class Network<float>;
template class Network<double>;

}  // namespace snas
