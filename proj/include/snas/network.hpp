// Cells stacked into a classifier: stem conv, cells, global pooling and a
// linear head. Normal cells share one mask layout and reduction cells the
// other, but every cell gets its own mask tensor on each forward pass.
#pragma once

#include <cstdint>
#include <memory>
#include <span>
#include <vector>

#include "snas/cell.hpp"
#include "snas/param_store.hpp"

namespace snas {

struct NetworkConfig {
    std::size_t in_channels = 3;
    std::size_t image_size = 8;
    std::size_t init_channels = 16;
    std::size_t num_cells = 3;
    std::size_t num_intermediate = 2;
    std::size_t num_classes = 10;
    std::vector<OpKind> candidates = full_op_set();
    /// When false every cell is a normal cell.
    bool reduction_cells = true;
};

struct CellLayout {
    CellType type = CellType::normal;
    bool reduction_prev = false;
    std::size_t c_prev_prev = 0;
    std::size_t c_prev = 0;
    std::size_t channels = 0;
    std::size_t in_size = 0;   // spatial size of the cell inputs
    std::size_t out_size = 0;  // spatial size of the intermediates
};

class NetworkSpec {
public:
    explicit NetworkSpec(NetworkConfig config);

    const NetworkConfig& config() const { return config_; }
    const ParentGraph& graph() const { return *graph_; }
    std::size_t num_cells() const { return layouts_.size(); }
    const CellLayout& layout(std::size_t cell) const { return layouts_.at(cell); }
    CellType cell_type(std::size_t cell) const { return layout(cell).type; }
    bool has_reduction() const;
    std::size_t head_channels() const { return head_channels_; }
    /// Input channels and spatial size an edge operation of `cell` sees.
    OpGeometry edge_geometry(std::size_t cell, std::size_t edge) const;
    /// Output spatial size of `edge` in `cell`.
    std::size_t edge_out_size(std::size_t cell, std::size_t edge) const;

private:
    NetworkConfig config_;
    std::shared_ptr<const ParentGraph> graph_;
    std::vector<CellLayout> layouts_;
    std::size_t head_channels_ = 0;
};

template <typename T>
struct NetworkTrace {
    std::vector<CellTrace<T>> cells;
    Tensor<T> logits;
};

template <typename T>
class Network {
public:
    Network(NetworkSpec spec, std::uint64_t seed);
    Network(const Network&) = delete;
    Network& operator=(const Network&) = delete;

    /// masks[c] is the (edges x ops) mask of cell c.
    Tensor<T> forward(const Tensor<T>& images, std::span<const Tensor<T>> masks,
                      NetworkTrace<T>* trace = nullptr) const;
    /// Runs the child network of `genotype` with the shared parameters.
    Tensor<T> forward_child(const Tensor<T>& images, const Genotype& genotype) const;

    const NetworkSpec& spec() const { return spec_; }
    ParamStore<T>& params() { return params_; }
    const ParamStore<T>& params() const { return params_; }
    const Cell<T>& cell(std::size_t i) const { return cells_.at(i); }
    const Tensor<T>& classifier_bias() const { return classifier_bias_; }

private:
    Tensor<T> stem(const Tensor<T>& images) const;
    Tensor<T> head(const Tensor<T>& features) const;

    NetworkSpec spec_;
    ParamStore<T> params_;
    Tensor<T> stem_weight_;
    BnLayer<T> stem_bn_;
    std::vector<Cell<T>> cells_;
    Tensor<T> classifier_weight_, classifier_bias_;
};

}  // namespace snas
