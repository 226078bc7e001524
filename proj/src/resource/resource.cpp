#include "snas/resource.hpp"

#include <algorithm>
#include <array>
#include <stdexcept>

namespace snas {

namespace {

constexpr std::array<std::pair<ConstraintLevel, std::string_view>, 4> kLevels{{
    {ConstraintLevel::none, "none"},
    {ConstraintLevel::mild, "mild"},
    {ConstraintLevel::moderate, "moderate"},
    {ConstraintLevel::aggressive, "aggressive"},
}};

std::vector<double> row_of(const std::vector<double>& values, std::size_t e, std::size_t k) {
    return std::vector<double>(values.begin() + static_cast<std::ptrdiff_t>(e * k),
                               values.begin() + static_cast<std::ptrdiff_t>((e + 1) * k));
}

}  // namespace

std::string_view constraint_name(ConstraintLevel level) {
    return kLevels[static_cast<std::size_t>(level)].second;
}

std::optional<ConstraintLevel> parse_constraint(std::string_view name) {
    for (const auto& [level, n] : kLevels) {
        if (n == name) return level;
    }
    return std::nullopt;
}

double ResourceConfig::preset_eta(ConstraintLevel level) {
    switch (level) {
        case ConstraintLevel::none:
            return 0.0;
        case ConstraintLevel::mild:
            return 0.0032;
        case ConstraintLevel::moderate:
            return 0.0128;
        case ConstraintLevel::aggressive:
            return 0.0512;
    }
    return 0.0;
}

void ResourceConfig::validate() const {
    if (eta < 0.0 || w_params < 0.0 || w_flops < 0.0 || w_mac < 0.0) {
        throw std::invalid_argument("resource: eta and criterion weights must be non-negative");
    }
}

std::vector<double> scalar_costs(std::span<const OpCost> costs, const ResourceConfig& config) {
    double max_p = 0, max_f = 0, max_m = 0;
    for (const auto& c : costs) {
        max_p = std::max(max_p, static_cast<double>(c.params));
        max_f = std::max(max_f, static_cast<double>(c.flops));
        max_m = std::max(max_m, static_cast<double>(c.mac));
    }
    auto norm = [](std::uint64_t v, double m) { return m > 0 ? static_cast<double>(v) / m : 0.0; };
    std::vector<double> out;
    for (const auto& c : costs) {
        out.push_back(config.w_params * norm(c.params, max_p) + config.w_flops * norm(c.flops, max_f) +
                      config.w_mac * norm(c.mac, max_m));
    }
    return out;
}

CostTable build_cost_table(const NetworkSpec& spec, const ResourceConfig& config) {
    CostTable table;
    const ParentGraph& g = spec.graph();
    for (std::size_t c = 0; c < spec.num_cells(); ++c) {
        table.cell_types.push_back(spec.cell_type(c));
        std::vector<std::vector<OpCost>> cell_raw;
        std::vector<std::vector<double>> cell_scalar;
        const std::size_t hw = spec.layout(c).out_size;
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const OpGeometry geo = spec.edge_geometry(c, e);
            std::vector<OpCost> costs;
            for (OpKind kind : g.candidates()) costs.push_back(op_cost(kind, hw, hw, geo.c_in, geo.c_out, geo.stride));
            cell_scalar.push_back(scalar_costs(costs, config));
            cell_raw.push_back(std::move(costs));
        }
        table.raw.push_back(std::move(cell_raw));
        table.scalar.push_back(std::move(cell_scalar));
    }
    return table;
}

double sample_cost(const CostTable& table, std::span<const std::vector<double>> masks) {
    if (masks.size() != table.scalar.size()) throw std::invalid_argument("sample_cost: one mask per cell expected");
    double total = 0.0;
    for (std::size_t c = 0; c < masks.size(); ++c) {
        const auto& cell = table.scalar[c];
        const std::size_t k = cell.empty() ? 0 : cell[0].size();
        if (masks[c].size() != cell.size() * k) throw ShapeError("sample_cost: mask does not match the cell");
        for (std::size_t e = 0; e < cell.size(); ++e) {
            for (std::size_t j = 0; j < k; ++j) total += masks[c][e * k + j] * cell[e][j];
        }
    }
    return total;
}

std::array<double, 3> masked_raw_cost(const CostTable& table, std::span<const std::vector<double>> masks) {
    if (masks.size() != table.raw.size()) throw std::invalid_argument("masked_raw_cost: one mask per cell expected");
    std::array<double, 3> total{0.0, 0.0, 0.0};
    for (std::size_t c = 0; c < masks.size(); ++c) {
        const auto& cell = table.raw[c];
        const std::size_t k = cell.empty() ? 0 : cell[0].size();
        if (masks[c].size() != cell.size() * k) throw ShapeError("masked_raw_cost: mask does not match the cell");
        for (std::size_t e = 0; e < cell.size(); ++e) {
            for (std::size_t j = 0; j < k; ++j) {
                const double z = masks[c][e * k + j];
                total[0] += z * static_cast<double>(cell[e][j].params);
                total[1] += z * static_cast<double>(cell[e][j].flops);
                total[2] += z * static_cast<double>(cell[e][j].mac);
            }
        }
    }
    return total;
}

OpCost child_cost(const CostTable& table, std::span<const std::vector<std::size_t>> choices) {
    if (choices.size() != table.raw.size()) throw std::invalid_argument("child_cost: one choice list per cell");
    OpCost total;
    for (std::size_t c = 0; c < choices.size(); ++c) {
        for (std::size_t e = 0; e < choices[c].size(); ++e) total += table.raw[c].at(e).at(choices[c][e]);
    }
    return total;
}

OpCost subgraph_walk_cost(const NetworkSpec& spec, const Genotype& genotype) {
    const ParentGraph& g = spec.graph();
    OpCost total;
    Rng rng(0);
    for (std::size_t c = 0; c < spec.num_cells(); ++c) {
        const CellLayout& layout = spec.layout(c);
        const bool reduce = layout.type == CellType::reduce;
        const auto& ops = genotype.ops(layout.type);
        for (std::size_t e = 0; e < g.num_edges(); ++e) {
            const OpKind kind = ops.at(e);
            if (kind == OpKind::zero) continue;
            const Edge& edge = g.edges()[e];
            // Inputs to the cell arrive at in_size; intermediates live at out_size.
            const bool from_input = edge.from < ParentGraph::kNumInputs;
            const std::size_t in_size = from_input ? layout.in_size : layout.out_size;
            const std::size_t stride = reduce && from_input ? 2 : 1;
            ParamStore<double> params;
            CandidateOp<double> op(kind, OpGeometry{layout.channels, layout.channels, stride}, params, "walk", rng);
            NoGradScope<double> ng;
            const Tensor<double> x(Shape{2, layout.channels, in_size, in_size}, 1.0);
            const Tensor<double> y = op.forward(x);
            const std::uint64_t hw = y.dim(2) * y.dim(3);
            const std::uint64_t c_in = x.dim(1), c_out = y.dim(1);
            if (kind == OpKind::skip && params.size() == 0) {
                total.mac += hw * (c_in + c_out);
            } else if (is_pool(kind)) {
                total.flops += hw * 9 * c_in * c_out;
                total.mac += hw * (c_in + c_out);
            } else {
                std::uint64_t prev = c_in;
                for (const auto& [name, w] : params) {
                    if (name.find(".conv") == std::string::npos) continue;
                    const std::uint64_t p = w.size();
                    const std::uint64_t out = w.dim(0);
                    total.params += p;
                    total.flops += hw * p;
                    total.mac += hw * (prev + out) + p;
                    prev = out;
                }
            }
        }
    }
    return total;
}

template <typename T>
double expected_cost(const CostTable& table, const ArchParams<T>& alpha) {
    double total = 0.0;
    for (std::size_t c = 0; c < table.scalar.size(); ++c) {
        const auto logits = to_doubles(alpha.of(table.cell_types[c]));
        const std::size_t k = alpha.num_ops();
        for (std::size_t e = 0; e < table.scalar[c].size(); ++e) {
            const auto p = probabilities(row_of(logits, e, k));
            for (std::size_t j = 0; j < k; ++j) total += p[j] * table.scalar[c][e][j];
        }
    }
    return total;
}

template <typename T>
std::pair<std::vector<double>, std::vector<double>> expected_cost_grad(const CostTable& table,
                                                                       const ArchParams<T>& alpha) {
    std::vector<double> normal(alpha.normal.size(), 0.0), reduce(alpha.reduce.size(), 0.0);
    const std::size_t k = alpha.num_ops();
    for (std::size_t c = 0; c < table.scalar.size(); ++c) {
        const CellType type = table.cell_types[c];
        const auto logits = to_doubles(alpha.of(type));
        auto& out = type == CellType::normal ? normal : reduce;
        for (std::size_t e = 0; e < table.scalar[c].size(); ++e) {
            const auto p = probabilities(row_of(logits, e, k));
            const auto& cost = table.scalar[c][e];
            double mean = 0.0;
            for (std::size_t j = 0; j < k; ++j) mean += p[j] * cost[j];
            for (std::size_t j = 0; j < k; ++j) out[e * k + j] += p[j] * (cost[j] - mean);
        }
    }
    return {normal, reduce};
}

template <typename T>
std::pair<std::vector<double>, std::vector<double>> cost_grad_from_choices(
    const CostTable& table, const ArchParams<T>& alpha, std::span<const std::vector<std::size_t>> choices) {
    std::vector<double> normal(alpha.normal.size(), 0.0), reduce(alpha.reduce.size(), 0.0);
    const std::size_t k = alpha.num_ops();
    for (std::size_t c = 0; c < table.scalar.size(); ++c) {
        const CellType type = table.cell_types[c];
        const auto logits = to_doubles(alpha.of(type));
        auto& out = type == CellType::normal ? normal : reduce;
        for (std::size_t e = 0; e < table.scalar[c].size(); ++e) {
            const std::size_t chosen = choices[c].at(e);
            const auto score = categorical_score(row_of(logits, e, k), chosen);
            const double reward = table.scalar[c][e][chosen];
            for (std::size_t j = 0; j < k; ++j) out[e * k + j] += score[j] * reward;
        }
    }
    return {normal, reduce};
}

template <typename T>
std::pair<std::vector<double>, std::vector<double>> mc_cost_grad(const CostTable& table,
                                                                 const ArchParams<T>& alpha, double temperature,
                                                                 std::size_t num_samples, Rng& rng) {
    if (num_samples < 1) throw std::invalid_argument("mc_cost_grad: num_samples must be at least 1");
    if (!(temperature > 0.0)) throw std::domain_error("temperature must be positive");
    const std::size_t k = alpha.num_ops();
    std::vector<double> normal(alpha.normal.size(), 0.0), reduce(alpha.reduce.size(), 0.0);
    const auto ln = to_doubles(alpha.normal), lr = to_doubles(alpha.reduce);
    std::vector<double> g(k);
    for (std::size_t s = 0; s < num_samples; ++s) {
        std::vector<std::vector<std::size_t>> choices(table.scalar.size());
        for (std::size_t c = 0; c < table.scalar.size(); ++c) {
            const auto& logits = table.cell_types[c] == CellType::normal ? ln : lr;
            for (std::size_t e = 0; e < table.scalar[c].size(); ++e) {
                for (auto& v : g) v = draw_gumbel(rng);
                choices[c].push_back(argmax_lowest(concrete_row(row_of(logits, e, k), g, temperature)));
            }
        }
        const auto [n, r] = cost_grad_from_choices(table, alpha, choices);
        for (std::size_t i = 0; i < n.size(); ++i) normal[i] += n[i];
        for (std::size_t i = 0; i < r.size(); ++i) reduce[i] += r[i];
    }
    for (double& v : normal) v /= static_cast<double>(num_samples);
    for (double& v : reduce) v /= static_cast<double>(num_samples);
    return {normal, reduce};
}

#define SNAS_INSTANTIATE_RESOURCE(T)                                                                         \
    template double expected_cost<T>(const CostTable&, const ArchParams<T>&);                                \
    template std::pair<std::vector<double>, std::vector<double>> expected_cost_grad<T>(const CostTable&,     \
                                                                                       const ArchParams<T>&); \
    template std::pair<std::vector<double>, std::vector<double>> mc_cost_grad<T>(                            \
        const CostTable&, const ArchParams<T>&, double, std::size_t, Rng&);                                  \
    template std::pair<std::vector<double>, std::vector<double>> cost_grad_from_choices<T>(                  \
        const CostTable&, const ArchParams<T>&, std::span<const std::vector<std::size_t>>);

SNAS_INSTANTIATE_RESOURCE(float)
SNAS_INSTANTIATE_RESOURCE(double)

}  // namespace snas
