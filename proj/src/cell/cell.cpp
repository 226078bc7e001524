#include "snas/cell.hpp"

#include <algorithm>
#include <sstream>
#include <stdexcept>

namespace snas {

std::string_view cell_type_name(CellType type) {
    return type == CellType::normal ? "normal" : "reduce";
}

ParentGraph::ParentGraph(std::size_t num_intermediate, std::vector<OpKind> candidates)
    : num_intermediate_(num_intermediate), candidates_(std::move(candidates)) {
    if (num_intermediate_ == 0) throw std::invalid_argument("parent graph needs an intermediate node");
    if (candidates_.empty()) throw std::invalid_argument("parent graph needs candidate operations");
    if (std::find(candidates_.begin(), candidates_.end(), OpKind::zero) == candidates_.end()) {
        throw std::invalid_argument("candidate list must contain the zero operation");
    }
    for (std::size_t j = kNumInputs; j < num_nodes(); ++j) {
        for (std::size_t i = 0; i < j; ++i) edges_.push_back(Edge{i, j});
    }
}

std::size_t ParentGraph::edge_index(std::size_t from, std::size_t to) const {
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        if (edges_[e].from == from && edges_[e].to == to) return e;
    }
    throw std::out_of_range("no edge (" + std::to_string(from) + "," + std::to_string(to) + ")");
}

std::vector<std::size_t> ParentGraph::incoming(std::size_t node) const {
    std::vector<std::size_t> out;
    for (std::size_t e = 0; e < edges_.size(); ++e) {
        if (edges_[e].to == node) out.push_back(e);
    }
    return out;
}

std::size_t ParentGraph::op_index(OpKind kind) const {
    auto it = std::find(candidates_.begin(), candidates_.end(), kind);
    if (it == candidates_.end()) {
        throw std::out_of_range(std::string(op_name(kind)) + " is not a candidate operation");
    }
    return static_cast<std::size_t>(it - candidates_.begin());
}

std::size_t argmax_lowest(std::span<const double> values) {
    std::size_t best = 0;
    for (std::size_t k = 1; k < values.size(); ++k) {
        if (values[k] > values[best]) best = k;
    }
    return best;
}

std::vector<OpKind> derive_cell_ops(std::span<const double> logits, const ParentGraph& graph) {
    const std::size_t k = graph.num_ops();
    if (logits.size() != graph.num_edges() * k) {
        throw std::invalid_argument("derive: " + std::to_string(logits.size()) + " logits for " +
                                    std::to_string(graph.num_edges()) + " edges x " + std::to_string(k) + " ops");
    }
    std::vector<OpKind> ops;
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        ops.push_back(graph.candidates()[argmax_lowest(logits.subspan(e * k, k))]);
    }
    return ops;
}

std::string render_genotype_text(const Genotype& genotype, const ParentGraph& graph) {
    std::ostringstream out;
    for (CellType type : {CellType::normal, CellType::reduce}) {
        const auto& ops = genotype.ops(type);
        for (std::size_t e = 0; e < ops.size(); ++e) {
            const Edge& edge = graph.edges()[e];
            out << cell_type_name(type) << " edge(" << edge.from << "," << edge.to << ") " << op_name(ops[e])
                << "\n";
        }
    }
    return out.str();
}

Genotype parse_genotype_text(const std::string& text, const ParentGraph& graph) {
    Genotype g;
    g.normal.assign(graph.num_edges(), OpKind::zero);
    g.reduce.assign(graph.num_edges(), OpKind::zero);
    std::vector<bool> seen_normal(graph.num_edges()), seen_reduce(graph.num_edges());
    std::istringstream in(text);
    std::string line;
    while (std::getline(in, line)) {
        if (line.empty() || line[0] == '#') continue;
        std::istringstream ls(line);
        std::string type, edge, op;
        ls >> type >> edge >> op;
        std::size_t from = 0, to = 0;
        if (std::sscanf(edge.c_str(), "edge(%zu,%zu)", &from, &to) != 2) {
            throw std::invalid_argument("genotype: malformed edge in line '" + line + "'");
        }
        auto kind = parse_op(op);
        if (!kind) throw std::invalid_argument("genotype: unknown op '" + op + "'");
        const std::size_t e = graph.edge_index(from, to);
        if (type == "normal") {
            g.normal[e] = *kind;
            seen_normal[e] = true;
        } else if (type == "reduce") {
            g.reduce[e] = *kind;
            seen_reduce[e] = true;
        } else {
            throw std::invalid_argument("genotype: unknown cell type '" + type + "'");
        }
    }
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        if (!seen_normal[e] || !seen_reduce[e]) throw std::invalid_argument("genotype: missing edges");
    }
    return g;
}

std::string render_genotype_dot(const Genotype& genotype, const ParentGraph& graph) {
    std::ostringstream out;
    out << "digraph genotype {\n  rankdir=LR;\n";
    for (CellType type : {CellType::normal, CellType::reduce}) {
        const std::string name(cell_type_name(type));
        out << "  subgraph cluster_" << name << " {\n    label=\"" << name << "\";\n";
        auto node_id = [&](std::size_t n) { return name + "_" + std::to_string(n); };
        for (std::size_t n = 0; n < graph.num_nodes(); ++n) {
            const std::string label = n == 0 ? "c_{k-2}" : n == 1 ? "c_{k-1}" : std::to_string(n - 2);
            out << "    " << node_id(n) << " [label=\"" << label << "\"];\n";
        }
        out << "    " << name << "_out [label=\"c_{k}\"];\n";
        const auto& ops = genotype.ops(type);
        for (std::size_t e = 0; e < ops.size(); ++e) {
            if (ops[e] == OpKind::zero) continue;
            const Edge& edge = graph.edges()[e];
            out << "    " << node_id(edge.from) << " -> " << node_id(edge.to) << " [label=\"" << op_name(ops[e])
                << "\"];\n";
        }
        for (std::size_t n = ParentGraph::kNumInputs; n < graph.num_nodes(); ++n) {
            out << "    " << node_id(n) << " -> " << name << "_out;\n";
        }
        out << "  }\n";
    }
    out << "}\n";
    return out.str();
}

template <typename T>
Tensor<T> one_hot_mask(std::span<const OpKind> ops, const ParentGraph& graph) {
    if (ops.size() != graph.num_edges()) {
        throw std::invalid_argument("one_hot_mask: " + std::to_string(ops.size()) + " ops for " +
                                    std::to_string(graph.num_edges()) + " edges");
    }
    Tensor<T> mask(Shape{graph.num_edges(), graph.num_ops()});
    for (std::size_t e = 0; e < ops.size(); ++e) mask[e * graph.num_ops() + graph.op_index(ops[e])] = T(1);
    return mask;
}

template <typename T>
Cell<T>::Cell(const ParentGraph& graph, CellType type, std::size_t c_prev_prev, std::size_t c_prev,
              std::size_t channels, bool reduction_prev, ParamStore<T>& params, const std::string& prefix,
              Rng& rng)
    : graph_(&graph), type_(type), channels_(channels) {
    preprocess0_ = ReluConvBn<T>(c_prev_prev, channels, 1, reduction_prev ? 2 : 1, 0, true, params,
                                 prefix + ".pre0", rng);
    preprocess1_ = ReluConvBn<T>(c_prev, channels, 1, 1, 0, true, params, prefix + ".pre1", rng);
    for (std::size_t e = 0; e < graph.num_edges(); ++e) {
        const Edge& edge = graph.edges()[e];
        const std::size_t stride = (type == CellType::reduce && edge.from < ParentGraph::kNumInputs) ? 2 : 1;
        std::vector<CandidateOp<T>> ops;
        for (OpKind kind : graph.candidates()) {
            ops.emplace_back(kind, OpGeometry{channels, channels, stride}, params,
                             prefix + ".edge" + std::to_string(edge.from) + "_" + std::to_string(edge.to) + "." +
                                 std::string(op_name(kind)),
                             rng);
        }
        ops_.push_back(std::move(ops));
    }
}

template <typename T>
Tensor<T> Cell<T>::forward(const Tensor<T>& s0, const Tensor<T>& s1, const Tensor<T>& mask,
                           CellTrace<T>* trace) const {
    const ParentGraph& g = *graph_;
    if (mask.rank() != 2 || mask.dim(0) != g.num_edges() || mask.dim(1) != g.num_ops()) {
        throw ShapeError("cell forward: mask " + to_string(mask.shape()) + " for " +
                         std::to_string(g.num_edges()) + " edges x " + std::to_string(g.num_ops()) + " ops");
    }
    std::vector<Tensor<T>> nodes{preprocess0_.forward(s0), preprocess1_.forward(s1)};
    std::vector<std::vector<Tensor<T>>> op_outputs(g.num_edges());
    std::vector<Tensor<T>> edge_outputs(g.num_edges());
    const bool dense = mask.requires_grad();
    const std::size_t k_ops = g.num_ops();
    for (std::size_t j = ParentGraph::kNumInputs; j < g.num_nodes(); ++j) {
        Tensor<T> node;
        for (std::size_t e : g.incoming(j)) {
            const Tensor<T>& x = nodes[g.edges()[e].from];
            auto& outs = op_outputs[e];
            outs.resize(k_ops);
            for (std::size_t k = 0; k < k_ops; ++k) {
                if (dense || mask[e * k_ops + k] != T(0)) outs[k] = ops_[e][k].forward(x);
            }
            if (std::none_of(outs.begin(), outs.end(), [](const Tensor<T>& t) { return t.defined(); })) {
                throw std::invalid_argument("cell forward: mask row " + std::to_string(e) + " is all zeros");
            }
            edge_outputs[e] = mix(row(mask, e), outs);
            node = node.defined() ? add(node, edge_outputs[e]) : edge_outputs[e];
        }
        nodes.push_back(node);
    }
    Tensor<T> out = concat_channels(std::vector<Tensor<T>>(nodes.begin() + ParentGraph::kNumInputs, nodes.end()));
    if (trace) {
        trace->nodes = std::move(nodes);
        trace->op_outputs = std::move(op_outputs);
        trace->edge_outputs = std::move(edge_outputs);
        trace->mask = mask;
    }
    return out;
}

template <typename T>
Tensor<T> Cell<T>::forward_child(const Tensor<T>& s0, const Tensor<T>& s1, std::span<const OpKind> ops) const {
    const ParentGraph& g = *graph_;
    if (ops.size() != g.num_edges()) {
        throw std::invalid_argument("cell forward_child: " + std::to_string(ops.size()) + " ops for " +
                                    std::to_string(g.num_edges()) + " edges");
    }
    std::vector<Tensor<T>> nodes{preprocess0_.forward(s0), preprocess1_.forward(s1)};
    for (std::size_t j = ParentGraph::kNumInputs; j < g.num_nodes(); ++j) {
        Tensor<T> node;
        for (std::size_t e : g.incoming(j)) {
            Tensor<T> out = ops_[e][g.op_index(ops[e])].forward(nodes[g.edges()[e].from]);
            node = node.defined() ? add(node, out) : out;
        }
        nodes.push_back(node);
    }
    return concat_channels(std::vector<Tensor<T>>(nodes.begin() + ParentGraph::kNumInputs, nodes.end()));
}

template <typename T>
typename FunctionalCell<T>::Trace FunctionalCell<T>::forward(const std::vector<Tensor<T>>& inputs,
                                                             std::span<const Tensor<T>> masks) const {
    if (inputs.size() != num_inputs) throw std::invalid_argument("functional cell: wrong input count");
    if (masks.size() != edges.size()) {
        throw std::invalid_argument("functional cell: " + std::to_string(masks.size()) + " masks for " +
                                    std::to_string(edges.size()) + " edges");
    }
    Trace trace;
    trace.nodes.assign(num_nodes, Tensor<T>());
    for (std::size_t i = 0; i < num_inputs; ++i) trace.nodes[i] = inputs[i];
    trace.op_outputs.resize(edges.size());
    trace.edge_outputs.resize(edges.size());
    for (std::size_t j = num_inputs; j < num_nodes; ++j) {
        Tensor<T> node;
        for (std::size_t e = 0; e < edges.size(); ++e) {
            if (edges[e].to != j) continue;
            const auto& edge = edges[e];
            if (edge.from >= j) throw std::invalid_argument("functional cell: edges must point forward");
            for (const auto& op : edge.ops) trace.op_outputs[e].push_back(op(trace.nodes[edge.from]));
            trace.edge_outputs[e] = mix(masks[e], trace.op_outputs[e]);
            node = node.defined() ? add(node, trace.edge_outputs[e]) : trace.edge_outputs[e];
        }
        if (!node.defined()) throw std::invalid_argument("functional cell: node without incoming edges");
        trace.nodes[j] = node;
    }
    return trace;
}

template Tensor<float> one_hot_mask<float>(std::span<const OpKind>, const ParentGraph&);
template Tensor<double> one_hot_mask<double>(std::span<const OpKind>, const ParentGraph&);
template class Cell<float>;
template class Cell<double>;
template struct FunctionalCell<float>;
template struct FunctionalCell<double>;

}  // namespace snas
