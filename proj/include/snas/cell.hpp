// The parent-graph DAG cell and its masked forward pass.
//
// Nodes 0 and 1 are the (preprocessed) cell inputs, nodes 2.. are the
// intermediate nodes; every intermediate node j receives an edge from each
// node i < j. With one row of the mask per edge,
//
//     x_j = sum_{i<j} Z_{i,j}^T O_{i,j}(x_i)
//
// and the cell output is the channel concatenation of the intermediates.
#pragma once

#include <functional>
#include <span>
#include <string>
#include <vector>

#include "snas/nn_ops.hpp"
#include "snas/tensor.hpp"

namespace snas {

struct Edge {
    std::size_t from = 0;
    std::size_t to = 0;
    friend bool operator==(const Edge&, const Edge&) = default;
};

enum class CellType { normal, reduce };

std::string_view cell_type_name(CellType type);

class ParentGraph {
public:
    static constexpr std::size_t kNumInputs = 2;

    ParentGraph(std::size_t num_intermediate, std::vector<OpKind> candidates);

    std::size_t num_intermediate() const { return num_intermediate_; }
    std::size_t num_nodes() const { return kNumInputs + num_intermediate_; }
    std::size_t num_edges() const { return edges_.size(); }
    std::size_t num_ops() const { return candidates_.size(); }
    const std::vector<Edge>& edges() const { return edges_; }
    const std::vector<OpKind>& candidates() const { return candidates_; }
    std::size_t edge_index(std::size_t from, std::size_t to) const;
    /// Edge indices pointing into `node`, ordered by source.
    std::vector<std::size_t> incoming(std::size_t node) const;
    std::size_t op_index(OpKind kind) const;

private:
    std::size_t num_intermediate_;
    std::vector<OpKind> candidates_;
    std::vector<Edge> edges_;
};

/// One chosen operation per edge for each cell type. Choosing `zero`
/// removes the edge.
struct Genotype {
    std::vector<OpKind> normal;
    std::vector<OpKind> reduce;

    const std::vector<OpKind>& ops(CellType type) const { return type == CellType::normal ? normal : reduce; }
    friend bool operator==(const Genotype&, const Genotype&) = default;
};

/// Index of the largest entry; ties go to the lowest index.
std::size_t argmax_lowest(std::span<const double> values);

/// Per-edge argmax over a row-major (edges x ops) logit matrix, zero included.
std::vector<OpKind> derive_cell_ops(std::span<const double> logits, const ParentGraph& graph);

/// `celltype edge(i,j) opname`, one line per edge.
std::string render_genotype_text(const Genotype& genotype, const ParentGraph& graph);
Genotype parse_genotype_text(const std::string& text, const ParentGraph& graph);
/// Graphviz digraph of both cells; edges choosing `zero` are omitted.
std::string render_genotype_dot(const Genotype& genotype, const ParentGraph& graph);

/// One-hot (edges x ops) mask selecting `ops`.
template <typename T>
Tensor<T> one_hot_mask(std::span<const OpKind> ops, const ParentGraph& graph);

template <typename T>
struct CellTrace {
    std::vector<Tensor<T>> nodes;                    // all nodes, inputs first
    std::vector<std::vector<Tensor<T>>> op_outputs;  // [edge][op], undefined when skipped
    std::vector<Tensor<T>> edge_outputs;             // Z^T O(x_i) per edge
    Tensor<T> mask;
};

template <typename T>
class Cell {
public:
    Cell(const ParentGraph& graph, CellType type, std::size_t c_prev_prev, std::size_t c_prev,
         std::size_t channels, bool reduction_prev, ParamStore<T>& params, const std::string& prefix,
         Rng& rng);

    /// Masked forward. Ops whose mask entry is exactly zero are skipped when
    /// the mask carries no gradient.
    Tensor<T> forward(const Tensor<T>& s0, const Tensor<T>& s1, const Tensor<T>& mask,
                      CellTrace<T>* trace = nullptr) const;
    /// Executes only the selected op on each edge.
    Tensor<T> forward_child(const Tensor<T>& s0, const Tensor<T>& s1, std::span<const OpKind> ops) const;

    CellType type() const { return type_; }
    std::size_t channels() const { return channels_; }
    std::size_t out_channels() const { return channels_ * graph_->num_intermediate(); }
    const ParentGraph& graph() const { return *graph_; }
    const CandidateOp<T>& op(std::size_t edge, std::size_t k) const { return ops_[edge][k]; }

private:
    const ParentGraph* graph_;
    CellType type_;
    std::size_t channels_;
    ReluConvBn<T> preprocess0_, preprocess1_;
    std::vector<std::vector<CandidateOp<T>>> ops_;
};

/// A DAG cell whose candidate operations are arbitrary differentiable
/// callables. Node 0..num_inputs-1 are inputs; the last node is the output.
template <typename T>
struct FunctionalCell {
    using Op = std::function<Tensor<T>(const Tensor<T>&)>;
    struct EdgeOps {
        std::size_t from = 0;
        std::size_t to = 0;
        std::vector<Op> ops;
    };

    std::size_t num_inputs = 1;
    std::size_t num_nodes = 2;
    std::vector<EdgeOps> edges;

    struct Trace {
        std::vector<Tensor<T>> nodes;
        std::vector<std::vector<Tensor<T>>> op_outputs;
        std::vector<Tensor<T>> edge_outputs;
    };

    /// masks[e] is the weight vector for edge e.
    Trace forward(const std::vector<Tensor<T>>& inputs, std::span<const Tensor<T>> masks) const;
};

}  // namespace snas
