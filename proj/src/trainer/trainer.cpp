#include "snas/trainer.hpp"

#include <algorithm>
#include <chrono>
#include <cmath>
#include <cstdio>
#include <fstream>
#include <numbers>
#include <sstream>

#include "snas/credit.hpp"
#include "snas/ops.hpp"

namespace snas {

TemperatureSchedule TrainConfig::schedule() const {
    return TemperatureSchedule(initial_temperature, min_temperature, epochs, temperature_mode);
}

void TrainConfig::validate() const {
    if (epochs == 0 || batch_size == 0) throw std::invalid_argument("epochs and batch_size must be positive");
    if (!(sgd.lr > 0.0) || !(adam.lr > 0.0)) throw std::invalid_argument("learning rates must be positive");
    if (sgd.momentum < 0.0 || sgd.weight_decay < 0.0 || adam.weight_decay < 0.0) {
        throw std::invalid_argument("momentum and weight decay must be non-negative");
    }
    if (!(adam.beta1 >= 0.0 && adam.beta1 < 1.0 && adam.beta2 >= 0.0 && adam.beta2 < 1.0)) {
        throw std::invalid_argument("adam betas must lie in [0, 1)");
    }
    if (grad_clip < 0.0) throw std::invalid_argument("grad_clip must be non-negative");
    if (!(baseline_decay >= 0.0 && baseline_decay < 1.0)) throw std::invalid_argument("baseline_decay must lie in [0, 1)");
    resource.validate();
    schedule();
}

TrainConfig planted_train_defaults(std::uint64_t seed, SearchMode mode) {
    TrainConfig c;
    c.epochs = 30;
    c.batch_size = 32;
    c.adam.lr = 0.03;
    c.adam.weight_decay = 0.0;
    c.augment = false;
    c.seed = seed;
    c.mode = mode;
    return c;
}

double cosine_lr(double lr0, std::size_t step, std::size_t total) {
    if (total == 0) return lr0;
    const double t = static_cast<double>(std::min(step, total)) / static_cast<double>(total);
    return 0.5 * lr0 * (1.0 + std::cos(std::numbers::pi * t));
}

template <typename T>
Sgd<T>::Sgd(std::vector<Tensor<T>> params, SgdConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) velocity_.emplace_back(p.size(), T(0));
}

template <typename T>
void Sgd<T>::step(double lr) {
    const T mom = static_cast<T>(config_.momentum), wd = static_cast<T>(config_.weight_decay), rate = static_cast<T>(lr);
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        if (!p.has_grad()) continue;
        auto data = p.data();
        const auto grad = p.grad();
        auto& vel = velocity_[i];
        for (std::size_t j = 0; j < data.size(); ++j) {
            const T g = grad[j] + wd * data[j];
            vel[j] = mom * vel[j] + g;
            data[j] -= rate * vel[j];
        }
    }
}

template <typename T>
Adam<T>::Adam(std::vector<Tensor<T>> params, AdamConfig config) : params_(std::move(params)), config_(config) {
    for (const auto& p : params_) {
        m_.emplace_back(p.size(), 0.0);
        v_.emplace_back(p.size(), 0.0);
    }
}

template <typename T>
void Adam<T>::step() {
    ++t_;
    const double c1 = 1.0 - std::pow(config_.beta1, static_cast<double>(t_));
    const double c2 = 1.0 - std::pow(config_.beta2, static_cast<double>(t_));
    for (std::size_t i = 0; i < params_.size(); ++i) {
        auto& p = params_[i];
        auto data = p.data();
        const auto grad = p.has_grad() ? p.grad() : std::span<const T>();
        for (std::size_t j = 0; j < data.size(); ++j) {
            const double g = (grad.empty() ? 0.0 : static_cast<double>(grad[j])) +
                             config_.weight_decay * static_cast<double>(data[j]);
            m_[i][j] = config_.beta1 * m_[i][j] + (1.0 - config_.beta1) * g;
            v_[i][j] = config_.beta2 * v_[i][j] + (1.0 - config_.beta2) * g * g;
            const double update = config_.lr * (m_[i][j] / c1) / (std::sqrt(v_[i][j] / c2) + config_.eps);
            data[j] = static_cast<T>(static_cast<double>(data[j]) - update);
        }
    }
}

template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm) {
    double sq = 0.0;
    for (const auto& p : params) {
        if (!p.has_grad()) continue;
        for (T g : p.grad()) sq += static_cast<double>(g) * static_cast<double>(g);
    }
    const double norm = std::sqrt(sq);
    if (max_norm > 0.0 && norm > max_norm) {
        const T factor = static_cast<T>(max_norm / norm);
        for (auto& p : params) {
            if (!p.has_grad()) continue;
            for (T& g : p.grad_buffer()) g *= factor;
        }
    }
    return norm;
}

namespace {

template <typename T>
std::size_t count_correct(const Tensor<T>& logits, std::span<const int> labels) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::size_t correct = 0;
    for (std::size_t i = 0; i < n; ++i) {
        std::size_t best = 0;
        for (std::size_t k = 1; k < c; ++k) {
            if (logits[i * c + k] > logits[i * c + best]) best = k;
        }
        correct += static_cast<int>(best) == labels[i];
    }
    return correct;
}

template <typename T>
std::vector<Tensor<T>> params_of(ParamStore<T>& store) {
    std::vector<Tensor<T>> out;
    for (auto& [_, t] : store) out.push_back(t);
    return out;
}

std::vector<std::size_t> row_argmax(std::span<const double> z, std::size_t k) {
    std::vector<std::size_t> out;
    for (std::size_t e = 0; e < z.size() / k; ++e) out.push_back(argmax_lowest(z.subspan(e * k, k)));
    return out;
}

template <typename T>
Tensor<T> one_hot_rows(std::span<const std::size_t> choices, std::size_t k) {
    Tensor<T> m(Shape{choices.size(), k});
    for (std::size_t e = 0; e < choices.size(); ++e) m[e * k + choices[e]] = T(1);
    return m;
}

}  // namespace

template <typename T>
Search<T>::Search(const NetworkConfig& network, const TrainConfig& config)
    : config_(config),
      network_(NetworkSpec(network), stream_seed(config.seed, 1)),
      alpha_(network_.spec().graph().num_edges(), network_.spec().graph().num_ops()),
      costs_(build_cost_table(network_.spec(), config.resource)),
      theta_(params_of(network_.params())),
      sgd_(theta_, config.sgd),
      adam_({alpha_.normal, alpha_.reduce}, config.adam),
      rng_(stream_seed(config.seed, 2)),
      baseline_{config.baseline_decay} {
    config_.validate();
}

template <typename T>
std::vector<Tensor<T>> Search<T>::masks_for(double temperature, Rng& rng, bool on_tape) const {
    const NetworkSpec& spec = network_.spec();
    const std::size_t k = spec.graph().num_ops();
    std::vector<Tensor<T>> masks;
    for (std::size_t c = 0; c < spec.num_cells(); ++c) {
        const Tensor<T>& logits = alpha_.of(spec.cell_type(c));
        switch (config_.mode) {
            case SearchMode::snas: {
                Tensor<T> z = sample<T>(logits, temperature, rng).z;
                masks.push_back(on_tape ? z : z.detach());
                break;
            }
            case SearchMode::darts_attention: {
                Tensor<T> z = attention_mask(logits);
                masks.push_back(on_tape ? z : z.detach());
                break;
            }
            case SearchMode::reinforce_constant: {
                const auto ld = to_doubles(logits);
                std::vector<std::size_t> choices;
                std::vector<double> g(k);
                for (std::size_t e = 0; e < logits.dim(0); ++e) {
                    for (auto& v : g) v = draw_gumbel(rng);
                    choices.push_back(hard_choice(std::span<const double>(ld).subspan(e * k, k), g));
                }
                masks.push_back(one_hot_rows<T>(choices, k));
                break;
            }
        }
    }
    return masks;
}

template <typename T>
void Search<T>::add_cost_grad(std::span<const std::vector<std::size_t>> choices) {
    if (config_.resource.eta == 0.0) return;
    const auto [gn, gr] = cost_grad_from_choices(costs_, alpha_, choices);
    const T eta = static_cast<T>(config_.resource.eta);
    auto bn = alpha_.normal.grad_buffer();
    auto br = alpha_.reduce.grad_buffer();
    for (std::size_t i = 0; i < gn.size(); ++i) bn[i] += eta * static_cast<T>(gn[i]);
    for (std::size_t i = 0; i < gr.size(); ++i) br[i] += eta * static_cast<T>(gr[i]);
}

template <typename T>
void Search<T>::check_finite(double loss, std::size_t step) const {
    if (std::isfinite(loss)) return;
    std::ostringstream os;
    os << "non-finite training loss " << loss << " at epoch " << epoch_ << " step " << step;
    throw NumericalError(os.str());
}

template <typename T>
StepStats Search<T>::train_step(const Tensor<T>& images, std::span<const int> labels, double temperature,
                                double theta_lr, const Tensor<T>* reward_images, std::span<const int> reward_labels) {
    const NetworkSpec& spec = network_.spec();
    const ParentGraph& graph = spec.graph();
    const std::size_t k = graph.num_ops();
    network_.params().zero_grad();
    alpha_.zero_grad();

    StepStats stats;
    NetworkTrace<T> trace;
    std::vector<Tensor<T>> masks;
    Tape<T> tape;
    {
        TapeScope<T> scope(tape);
        masks = masks_for(temperature, rng_, true);
        const bool want_trace = config_.log_credits && config_.mode != SearchMode::reinforce_constant;
        const Tensor<T> logits = network_.forward(images, masks, want_trace ? &trace : nullptr);
        const Tensor<T> loss = cross_entropy(logits, labels);
        stats.loss = static_cast<double>(loss.item());
        check_finite(stats.loss, step_);
        tape.backward(loss);
    }
    stats.backward_passes = tape.backward_passes();
    stats.tape_records = tape.size();

    std::vector<std::vector<std::size_t>> choices;
    for (const auto& m : masks) choices.push_back(row_argmax(to_doubles(m), k));

    std::vector<double> step_credit(spec.num_cells() * graph.num_edges(), 0.0);
    if (config_.mode == SearchMode::reinforce_constant) {
        // Whole-child reward: accuracy on a held-out minibatch.
        double reward = 0.0;
        if (reward_images) {
            NoGradScope<T> ng;
            const Tensor<T> out = network_.forward(*reward_images, masks);
            reward = static_cast<double>(count_correct(out, reward_labels)) / static_cast<double>(reward_labels.size());
        }
        const double b = baseline_.update(reward);
        for (std::size_t c = 0; c < spec.num_cells(); ++c) {
            const CellType type = spec.cell_type(c);
            const auto step = reinforce_constant_step(to_doubles(alpha_.of(type)), k, choices[c], reward, b);
            auto buf = alpha_.of(type).grad_buffer();
            for (std::size_t i = 0; i < step.size(); ++i) buf[i] -= static_cast<T>(step[i]);
            for (std::size_t e = 0; e < graph.num_edges(); ++e) step_credit[c * graph.num_edges() + e] = reward - b;
        }
    } else if (config_.log_credits) {
        for (std::size_t c = 0; c < spec.num_cells(); ++c) {
            const auto report = edge_credit(activations(trace.cells[c], graph));
            for (std::size_t e = 0; e < graph.num_edges(); ++e) {
                step_credit[c * graph.num_edges() + e] = report.edge_credit[e];
            }
        }
    }
    if (credit_sum_.size() != step_credit.size()) credit_sum_.assign(step_credit.size(), 0.0);
    for (std::size_t i = 0; i < step_credit.size(); ++i) credit_sum_[i] += step_credit[i];
    ++credit_steps_;

    add_cost_grad(choices);
    stats.theta_grad_norm = clip_grad_norm<T>(theta_, config_.grad_clip);
    if (!std::isfinite(stats.theta_grad_norm)) {
        throw NumericalError("non-finite weight gradient at epoch " + std::to_string(epoch_) + " step " +
                             std::to_string(step_));
    }
    sgd_.step(theta_lr);
    adam_.step();
    ++step_;
    return stats;
}

template <typename T>
double Search<T>::search_accuracy(const Dataset& data, double temperature, Rng& rng) const {
    NoGradScope<T> ng;
    BnModeScope bn(BnMode::running);
    std::size_t correct = 0;
    for (const auto& batch : make_batches(data.size(), config_.batch_size, nullptr)) {
        const auto masks = masks_for(temperature, rng, false);
        const Tensor<T> out = network_.forward(batch_images<T>(data, batch), masks);
        correct += count_correct(out, batch_labels(data, batch));
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

template <typename T>
double Search<T>::child_accuracy(const Dataset& data) const {
    return evaluate(network_, genotype(), data, config_.batch_size);
}

template <typename T>
Genotype Search<T>::genotype() const {
    return derive_genotype(alpha_, network_.spec().graph());
}

template <typename T>
MetricsRow Search<T>::run_epoch(std::size_t epoch, const Dataset& train, const Dataset& val) {
    const auto start = std::chrono::steady_clock::now();
    epoch_ = epoch;
    const double temperature = config_.schedule().at(epoch);
    const double lr = cosine_lr(config_.sgd.lr, epoch, config_.epochs);
    Rng data_rng(stream_seed(config_.seed, 0x1000 + epoch));
    const auto batches = make_batches(train.size(), config_.batch_size, &data_rng);
    const auto reward_batches = make_batches(val.size(), config_.batch_size, &data_rng);
    credit_sum_.clear();
    credit_steps_ = 0;
    double loss_sum = 0.0;
    for (std::size_t b = 0; b < batches.size(); ++b) {
        Tensor<T> images = batch_images<T>(train, batches[b]);
        if (config_.augment) images = augment(images, data_rng);
        const auto labels = batch_labels(train, batches[b]);
        Tensor<T> reward_images;
        std::vector<int> reward_labels;
        if (config_.mode == SearchMode::reinforce_constant && val.size() > 0) {
            const auto& rb = reward_batches[b % reward_batches.size()];
            reward_images = batch_images<T>(val, rb);
            reward_labels = batch_labels(val, rb);
        }
        loss_sum += train_step(images, labels, temperature, lr, reward_images.defined() ? &reward_images : nullptr,
                               reward_labels)
                        .loss;
    }
    for (std::size_t i = 0; i < credit_sum_.size(); ++i) {
        const std::size_t edges = network_.spec().graph().num_edges();
        credits_.push_back(CreditRow{epoch, i / edges, i % edges, credit_sum_[i] / static_cast<double>(credit_steps_)});
    }

    MetricsRow row;
    row.epoch = epoch;
    row.train_loss = loss_sum / static_cast<double>(batches.size());
    Rng eval_rng(stream_seed(config_.seed, 0x2000 + epoch));
    row.search_val_acc = search_accuracy(val, temperature, eval_rng);
    row.child_val_acc = child_accuracy(val);
    row.mean_entropy = network_.spec().has_reduction()
                           ? 0.5 * (mean_entropy(alpha_.normal) + mean_entropy(alpha_.reduce))
                           : mean_entropy(alpha_.normal);
    row.expected_cost = expected_cost(costs_, alpha_);
    row.temperature = temperature;
    row.wall_s = std::chrono::duration<double>(std::chrono::steady_clock::now() - start).count();
    return row;
}

template <typename T>
std::vector<NamedArray> Search<T>::checkpoint() const {
    auto arrays = network_.params().to_arrays();
    for (auto& a : alpha_.to_arrays()) arrays.push_back(std::move(a));
    return arrays;
}

template <typename T>
void Search<T>::load(std::span<const NamedArray> arrays) {
    network_.params().load(arrays);
    alpha_.load(arrays);
}

template <typename T>
double evaluate(const Network<T>& network, const Genotype& genotype, const Dataset& data, std::size_t batch_size) {
    if (data.size() == 0) return 0.0;
    NoGradScope<T> ng;
    BnModeScope bn(BnMode::running);
    std::size_t correct = 0;
    for (const auto& batch : make_batches(data.size(), batch_size, nullptr)) {
        const Tensor<T> out = network.forward_child(batch_images<T>(data, batch), genotype);
        correct += count_correct(out, batch_labels(data, batch));
    }
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

namespace {

std::string describe_alpha(const std::vector<double>& values) {
    if (values.empty()) return "empty";
    const auto [lo, hi] = std::minmax_element(values.begin(), values.end());
    char buf[96];
    std::snprintf(buf, sizeof buf, "min %.6g max %.6g", *lo, *hi);
    return buf;
}

}  // namespace

template <typename T>
SearchResult run_search(const NetworkConfig& network, const TrainConfig& config, const Dataset& train,
                        const Dataset& val, const SearchHooks& hooks) {
    train.validate();
    val.validate();
    if (train.size() == 0 || val.size() == 0) throw DataError("search needs non-empty train and validation splits");
    if (train.channels != network.in_channels || train.height != network.image_size ||
        train.width != network.image_size) {
        throw DataError("dataset images are " + std::to_string(train.channels) + "x" + std::to_string(train.height) +
                        "x" + std::to_string(train.width) + " but the network expects " +
                        std::to_string(network.in_channels) + "x" + std::to_string(network.image_size) + "x" +
                        std::to_string(network.image_size));
    }
    Search<T> search(network, config);
    SearchResult result;
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        MetricsRow row;
        try {
            row = search.run_epoch(epoch, train, val);
        } catch (const NumericalError& e) {
            if (!hooks.diagnostic_dir.empty()) {
                std::ostringstream os;
                os << "error: " << e.what() << '\n'
                   << "temperature: " << config.schedule().at(epoch) << '\n'
                   << "alpha.normal: " << describe_alpha(to_doubles(search.alpha().normal)) << '\n'
                   << "alpha.reduce: " << describe_alpha(to_doubles(search.alpha().reduce)) << '\n'
                   << "epochs completed: " << result.metrics.size() << '\n';
                std::filesystem::create_directories(hooks.diagnostic_dir);
                write_text_atomic(hooks.diagnostic_dir / "diagnostic.txt", os.str());
            }
            throw;
        }
        result.metrics.push_back(row);
        result.genotype_history.push_back(search.genotype());
        if (hooks.on_epoch) hooks.on_epoch(row);
    }
    result.genotype = search.genotype();
    result.credits = search.credits();
    result.checkpoint = search.checkpoint();
    return result;
}

template <typename T>
double train_child(const NetworkConfig& network, const Genotype& genotype, const TrainConfig& config,
                   const Dataset& train, const Dataset& val) {
    config.validate();
    Network<T> net(NetworkSpec(network), stream_seed(config.seed, 1));
    const ParentGraph& g = net.spec().graph();
    std::vector<Tensor<T>> theta = params_of(net.params());
    Sgd<T> sgd(theta, config.sgd);
    std::vector<Tensor<T>> masks;
    for (std::size_t c = 0; c < net.spec().num_cells(); ++c) {
        masks.push_back(one_hot_mask<T>(genotype.ops(net.spec().cell_type(c)), g));
    }
    for (std::size_t epoch = 0; epoch < config.epochs; ++epoch) {
        Rng data_rng(stream_seed(config.seed, 0x3000 + epoch));
        const double lr = cosine_lr(config.sgd.lr, epoch, config.epochs);
        for (const auto& batch : make_batches(train.size(), config.batch_size, &data_rng)) {
            Tensor<T> images = batch_images<T>(train, batch);
            if (config.augment) images = augment(images, data_rng);
            net.params().zero_grad();
            Tape<T> tape;
            {
                TapeScope<T> scope(tape);
                const Tensor<T> loss = cross_entropy(net.forward(images, masks), batch_labels(train, batch));
                if (!std::isfinite(static_cast<double>(loss.item()))) {
                    throw NumericalError("non-finite loss while training the child at epoch " + std::to_string(epoch));
                }
                tape.backward(loss);
            }
            clip_grad_norm<T>(theta, config.grad_clip);
            sgd.step(lr);
        }
    }
    return evaluate(net, genotype, val, config.batch_size);
}

std::size_t epochs_to_recovery(std::span<const Genotype> history, const Genotype& target, bool compare_reduce) {
    auto match = [&](const Genotype& g) { return g.normal == target.normal && (!compare_reduce || g.reduce == target.reduce); };
    std::size_t first = history.size() + 1;
    for (std::size_t i = history.size(); i-- > 0;) {
        if (!match(history[i])) break;
        first = i + 1;
    }
    return first;
}

EtaCalibration calibrate_eta(const PlantedTaskConfig& task, const TrainConfig& train, std::span<const double> grid,
                             std::span<const std::uint64_t> seeds,
                             const std::function<void(const EtaTrial&)>& on_trial) {
    if (grid.empty() || seeds.empty()) throw std::invalid_argument("calibrate_eta needs a grid and seeds");
    if (!std::is_sorted(grid.begin(), grid.end())) throw std::invalid_argument("calibrate_eta: grid must ascend");
    EtaCalibration cal;
    bool zero_seen = false, moderate_found = false;
    for (double eta : grid) {
        std::size_t with_zero = 0, mostly_zero = 0;
        for (std::uint64_t seed : seeds) {
            PlantedTaskConfig tc = task;
            tc.seed = seed;
            const PlantedTask planted = make_planted_task(tc);
            TrainConfig cfg = train;
            cfg.seed = seed;
            cfg.resource.eta = eta;
            cfg.log_credits = false;
            const SearchResult r = run_search<float>(planted.network, cfg, planted.train, planted.val);
            EtaTrial trial;
            trial.eta = eta;
            trial.seed = seed;
            trial.genotype = r.genotype;
            trial.zero_edges = static_cast<std::size_t>(
                std::count(r.genotype.normal.begin(), r.genotype.normal.end(), OpKind::zero));
            trial.expected_cost = r.metrics.back().expected_cost;
            trial.child_val_acc = r.metrics.back().child_val_acc;
            if (on_trial) on_trial(trial);
            with_zero += trial.zero_edges > 0;
            mostly_zero += 2 * trial.zero_edges >= r.genotype.normal.size();
            cal.trials.push_back(std::move(trial));
        }
        if (with_zero > 0 && !zero_seen) zero_seen = true;
        if (!zero_seen) cal.mild = eta;
        if (with_zero == seeds.size() && !moderate_found) {
            cal.moderate = eta;
            moderate_found = true;
        }
        if (mostly_zero == seeds.size()) {
            if (!moderate_found) cal.moderate = eta;
            cal.aggressive = eta;
            cal.complete = zero_seen && cal.mild > 0.0;
            break;
        }
    }
    return cal;
}

namespace {

std::string fmt_double(double v, const char* pattern = "%.9g") {
    char buf[64];
    std::snprintf(buf, sizeof buf, pattern, v);
    return buf;
}

}  // namespace

std::string metrics_csv(std::span<const MetricsRow> rows) {
    std::ostringstream os;
    os << kMetricsHeader << '\n';
    for (const auto& r : rows) {
        os << r.epoch << ',' << fmt_double(r.train_loss) << ',' << fmt_double(r.search_val_acc) << ','
           << fmt_double(r.child_val_acc) << ',' << fmt_double(r.mean_entropy) << ',' << fmt_double(r.expected_cost)
           << ',' << fmt_double(r.temperature) << ',' << fmt_double(r.wall_s, "%.3f") << '\n';
    }
    return os.str();
}

std::string credits_csv(std::span<const CreditRow> rows, const ParentGraph& graph) {
    std::ostringstream os;
    os << "epoch,cell,edge,from,to,credit\n";
    for (const auto& r : rows) {
        const Edge& e = graph.edges().at(r.edge);
        os << r.epoch << ',' << r.cell << ',' << r.edge << ',' << e.from << ',' << e.to << ','
           << fmt_double(r.credit, "%.9e") << '\n';
    }
    return os.str();
}

void write_text_atomic(const std::filesystem::path& path, const std::string& text) {
    auto tmp = path;
    tmp += ".tmp";
    {
        std::ofstream out(tmp, std::ios::binary | std::ios::trunc);
        if (!out) throw std::runtime_error("cannot open " + tmp.string() + " for writing");
        out << text;
        if (!out) throw std::runtime_error("write failed: " + tmp.string());
    }
    std::filesystem::rename(tmp, path);
}

#define SNAS_INSTANTIATE_TRAINER(T)                                                                               \
    template class Sgd<T>;                                                                                        \
    template class Adam<T>;                                                                                       \
    template class Search<T>;                                                                                     \
    template double clip_grad_norm<T>(std::span<Tensor<T>>, double);                                              \
    template double evaluate<T>(const Network<T>&, const Genotype&, const Dataset&, std::size_t);                 \
    template SearchResult run_search<T>(const NetworkConfig&, const TrainConfig&, const Dataset&, const Dataset&, \
                                        const SearchHooks&);                                                      \
    template double train_child<T>(const NetworkConfig&, const Genotype&, const TrainConfig&, const Dataset&,     \
                                   const Dataset&);

SNAS_INSTANTIATE_TRAINER(float)
SNAS_INSTANTIATE_TRAINER(double)

}  // namespace snas
