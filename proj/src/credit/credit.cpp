#include "snas/credit.hpp"

#include <algorithm>
#include <cfloat>
#include <cmath>
#include <stdexcept>

#include "snas/ops.hpp"

namespace snas {

namespace {

thread_local bool g_credit_sign_fault = false;

template <typename T>
double inner(std::span<const T> a, std::span<const T> b) {
    double total = 0.0;
    for (std::size_t i = 0; i < a.size(); ++i) total += static_cast<double>(a[i]) * static_cast<double>(b[i]);
    return total;
}

template <typename T>
std::span<const T> node_grad(const Tensor<T>& node, std::size_t j) {
    if (!node.defined() || !node.has_grad()) {
        throw std::logic_error("credit: node " + std::to_string(j) + " has no gradient; run backward first");
    }
    return node.grad();
}

}  // namespace

std::vector<double> alpha_grad_row(std::span<const double> z, std::span<const double> alignments,
                                   double temperature, std::span<const double> logits, AlphaForm form) {
    if (z.size() != alignments.size() || z.size() != logits.size()) {
        throw ShapeError("alpha_grad_row: z, alignments and logits differ in length");
    }
    if (!(temperature > 0.0)) throw std::domain_error("temperature must be positive");
    double mean = 0.0;
    for (std::size_t k = 0; k < z.size(); ++k) mean += z[k] * alignments[k];
    std::vector<double> grad(z.size());
    for (std::size_t k = 0; k < z.size(); ++k) {
        grad[k] = z[k] / temperature * (alignments[k] - mean);
        if (form == AlphaForm::direct) grad[k] /= std::exp(logits[k]);
    }
    return grad;
}

template <typename T>
std::vector<double> analytic_alpha_grad(const CellActivations<T>& acts, std::span<const double> z,
                                        double temperature, std::span<const double> logits, AlphaForm form) {
    const std::size_t num_edges = acts.edges.size();
    if (acts.op_outputs.size() != num_edges || num_edges == 0 || z.size() % num_edges != 0 ||
        logits.size() != z.size()) {
        throw ShapeError("analytic_alpha_grad: activations do not match the mask");
    }
    const std::size_t k_ops = z.size() / num_edges;
    std::vector<double> grad;
    grad.reserve(z.size());
    for (std::size_t e = 0; e < num_edges; ++e) {
        const auto& outs = acts.op_outputs[e];
        if (outs.size() != k_ops) throw std::logic_error("analytic_alpha_grad: missing cached op outputs");
        const auto gj = node_grad(acts.nodes[acts.edges[e].to], acts.edges[e].to);
        std::vector<double> align(k_ops);
        for (std::size_t k = 0; k < k_ops; ++k) {
            if (!outs[k].defined()) {
                throw std::logic_error("analytic_alpha_grad: op " + std::to_string(k) + " on edge " +
                                       std::to_string(e) + " was not executed");
            }
            align[k] = inner<T>(gj, outs[k].data());
        }
        const auto row = alpha_grad_row(z.subspan(e * k_ops, k_ops), align, temperature,
                                        logits.subspan(e * k_ops, k_ops), form);
        grad.insert(grad.end(), row.begin(), row.end());
    }
    return grad;
}

template <typename T>
CreditReport edge_credit(const CellActivations<T>& acts, std::uint64_t sample_id) {
    CreditReport report;
    report.sample_id = sample_id;
    const double sign = CreditSignFault::active() ? 1.0 : -1.0;
    for (std::size_t e = 0; e < acts.edges.size(); ++e) {
        const std::size_t j = acts.edges[e].to;
        report.edge_credit.push_back(sign * inner<T>(node_grad(acts.nodes[j], j), acts.edge_outputs[e].data()));
    }
    for (std::size_t j = 0; j < acts.nodes.size(); ++j) {
        const auto& x = acts.nodes[j];
        report.node_credit.push_back(x.defined() && x.has_grad() ? inner<T>(x.grad(), x.data()) : 0.0);
    }
    return report;
}

CreditSignFault::CreditSignFault() : previous_(g_credit_sign_fault) {
    g_credit_sign_fault = true;
}

CreditSignFault::~CreditSignFault() {
    g_credit_sign_fault = previous_;
}

bool CreditSignFault::active() {
    return g_credit_sign_fault;
}

double MonteCarloEstimate::std_error(std::size_t i) const {
    return samples == 0 ? 0.0 : std::sqrt(variance[i] / static_cast<double>(samples));
}

MonteCarloEstimate monte_carlo(std::size_t n, Rng& rng, const std::function<std::vector<double>(Rng&)>& draw) {
    if (n < 1) throw std::invalid_argument("monte carlo needs at least one sample");
    MonteCarloEstimate est;
    std::vector<double> m2;
    for (std::size_t s = 0; s < n; ++s) {
        const auto x = draw(rng);
        if (s == 0) {
            est.mean.assign(x.size(), 0.0);
            m2.assign(x.size(), 0.0);
        } else if (x.size() != est.mean.size()) {
            throw ShapeError("monte carlo: draws differ in length");
        }
        const double count = static_cast<double>(s + 1);
        for (std::size_t i = 0; i < x.size(); ++i) {
            const double delta = x[i] - est.mean[i];
            est.mean[i] += delta / count;
            m2[i] += delta * (x[i] - est.mean[i]);
        }
    }
    est.samples = n;
    est.variance.resize(m2.size());
    for (std::size_t i = 0; i < m2.size(); ++i) est.variance[i] = n > 1 ? m2[i] / static_cast<double>(n - 1) : 0.0;
    return est;
}

std::vector<double> draw_mask(std::span<const double> logits, std::size_t num_ops, ScoreRegime regime, Rng& rng) {
    if (num_ops == 0 || logits.size() % num_ops != 0) throw ShapeError("draw_mask: bad logit matrix");
    std::vector<double> z;
    z.reserve(logits.size());
    std::vector<double> g(num_ops);
    for (std::size_t e = 0; e < logits.size() / num_ops; ++e) {
        const auto row = logits.subspan(e * num_ops, num_ops);
        for (auto& v : g) v = draw_gumbel(rng);
        if (regime.temperature > 0.0) {
            const auto zr = concrete_row(row, g, regime.temperature);
            z.insert(z.end(), zr.begin(), zr.end());
        } else {
            const std::size_t k = hard_choice(row, g);
            for (std::size_t j = 0; j < num_ops; ++j) z.push_back(j == k ? 1.0 : 0.0);
        }
    }
    return z;
}

std::vector<double> score_function_sample(std::span<const double> logits, std::size_t num_ops,
                                          ScoreRegime regime, const CreditFn& credit, Rng& rng) {
    const auto z = draw_mask(logits, num_ops, regime, rng);
    const auto local = credit(z);
    const std::size_t num_edges = logits.size() / num_ops;
    if (local.size() != num_edges) {
        throw ShapeError("score function: credit returned " + std::to_string(local.size()) + " values for " +
                         std::to_string(num_edges) + " edges");
    }
    std::vector<double> grad;
    grad.reserve(logits.size());
    for (std::size_t e = 0; e < num_edges; ++e) {
        const auto row = logits.subspan(e * num_ops, num_ops);
        const auto zr = std::span<const double>(z).subspan(e * num_ops, num_ops);
        std::vector<double> score;
        if (regime.temperature > 0.0) {
            std::vector<double> safe(zr.begin(), zr.end());
            for (double& v : safe) v = std::max(v, DBL_MIN);
            score = concrete_score(row, safe, regime.temperature);
        } else {
            score = categorical_score(row, argmax_lowest(zr));
        }
        for (double s : score) grad.push_back(s * local[e]);
    }
    return grad;
}

MonteCarloEstimate score_function_grad(std::span<const double> logits, std::size_t num_ops, ScoreRegime regime,
                                       const CreditFn& credit, std::size_t num_samples, Rng& rng) {
    if (num_samples < 1) throw std::invalid_argument("score_function_grad: num_samples must be at least 1");
    return monte_carlo(num_samples, rng,
                       [&](Rng& r) { return score_function_sample(logits, num_ops, regime, credit, r); });
}

TaylorReport taylor_credits(const TaylorNet& net, const Tensor<double>& input) {
    const std::size_t n = net.node_dims.size();
    if (n < 2) throw std::invalid_argument("taylor: need an input and at least one more node");
    for (const auto& e : net.edges) {
        if (e.bias.defined()) {
            throw std::invalid_argument("taylor: edge (" + std::to_string(e.from) + "," + std::to_string(e.to) +
                                        ") has a bias; the decomposition needs a bias-free network");
        }
        if (e.activation == Activation::sigmoid) {
            throw std::invalid_argument("taylor: edge (" + std::to_string(e.from) + "," + std::to_string(e.to) +
                                        ") uses a non-ReLU nonlinearity");
        }
        if (e.from >= e.to || e.to >= n) throw std::invalid_argument("taylor: edges must point forward");
    }
    if (input.size() != net.node_dims[0]) throw ShapeError("taylor: input does not match node 0");

    TaylorReport report;
    report.depth.assign(n, 0);
    for (const auto& e : net.edges) report.depth[e.to] = std::max(report.depth[e.to], report.depth[e.from] + 1);

    Tape<double> tape;
    std::vector<Tensor<double>> nodes(n);
    std::vector<Tensor<double>> outs(net.edges.size());
    Tensor<double> f;
    {
        TapeScope<double> scope(tape);
        nodes[0] = Tensor<double>(Shape{1, input.size()}, std::vector<double>(input.data().begin(), input.data().end()),
                                  true);
        for (std::size_t j = 1; j < n; ++j) {
            for (std::size_t e = 0; e < net.edges.size(); ++e) {
                const auto& edge = net.edges[e];
                if (edge.to != j) continue;
                Tensor<double> h = nodes[edge.from];
                if (edge.weight.defined()) h = matmul(h, edge.weight);
                if (edge.activation == Activation::relu) h = relu(h);
                if (h.same_storage(nodes[edge.from])) h = scale(h, 1.0);
                if (h.size() != net.node_dims[j]) throw ShapeError("taylor: edge output does not match its node");
                outs[e] = h;
                nodes[j] = nodes[j].defined() ? add(nodes[j], h) : h;
            }
            if (!nodes[j].defined()) throw std::invalid_argument("taylor: node " + std::to_string(j) + " has no inputs");
            if (!nodes[j].requires_grad()) nodes[j].set_requires_grad(true);
        }
        Tensor<double> readout(Shape{1, net.readout.size()},
                               std::vector<double>(net.readout.data().begin(), net.readout.data().end()));
        f = dot(nodes[n - 1], readout);
        tape.backward(f);
    }
    report.f = f.item();
    for (std::size_t j = 0; j < n; ++j) {
        report.node_credit.push_back(nodes[j].has_grad() ? inner<double>(nodes[j].grad(), nodes[j].data()) : 0.0);
    }
    for (std::size_t e = 0; e < net.edges.size(); ++e) {
        const auto& x = nodes[net.edges[e].to];
        report.edge_credit.push_back(x.has_grad() ? inner<double>(x.grad(), outs[e].data()) : 0.0);
    }
    const std::size_t max_depth = *std::max_element(report.depth.begin(), report.depth.end());
    report.layer_sum.assign(max_depth + 1, 0.0);
    for (std::size_t l = 0; l <= max_depth; ++l) {
        for (std::size_t j = 0; j < n; ++j) {
            if (report.depth[j] == l) report.layer_sum[l] += report.node_credit[j];
        }
        for (std::size_t e = 0; e < net.edges.size(); ++e) {
            if (report.depth[net.edges[e].from] < l && l < report.depth[net.edges[e].to]) {
                report.layer_sum[l] += report.edge_credit[e];
            }
        }
    }
    return report;
}

#define SNAS_INSTANTIATE_CREDIT(T)                                                                        \
    template std::vector<double> analytic_alpha_grad<T>(const CellActivations<T>&, std::span<const double>, \
                                                        double, std::span<const double>, AlphaForm);        \
    template CreditReport edge_credit<T>(const CellActivations<T>&, std::uint64_t);

SNAS_INSTANTIATE_CREDIT(float)
SNAS_INSTANTIATE_CREDIT(double)

}  // namespace snas
