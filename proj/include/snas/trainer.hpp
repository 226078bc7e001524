// Single-level joint search: every step samples a mask per cell, runs one
// forward/backward pass, and updates the operation weights (SGD) and the
// architecture logits (Adam) from the same loss.
#pragma once

#include <cstdint>
#include <filesystem>
#include <functional>
#include <optional>
#include <span>
#include <stdexcept>
#include <string>
#include <vector>

#include "snas/arch_dist.hpp"
#include "snas/baselines.hpp"
#include "snas/checkpoint.hpp"
#include "snas/data.hpp"
#include "snas/network.hpp"
#include "snas/resource.hpp"

namespace snas {

class NumericalError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

struct SgdConfig {
    double lr = 0.025;
    double momentum = 0.9;
    double weight_decay = 3e-4;
};

/// Weight decay is added to the gradient before the moment updates.
struct AdamConfig {
    double lr = 3e-4;
    double beta1 = 0.5;
    double beta2 = 0.999;
    double eps = 1e-8;
    double weight_decay = 1e-3;
};

struct TrainConfig {
    std::size_t epochs = 50;
    std::size_t batch_size = 64;
    SgdConfig sgd;
    AdamConfig adam;
    double grad_clip = 5.0;  // global norm on theta; 0 disables
    double initial_temperature = 1.0;
    double min_temperature = 0.03;
    TemperatureSchedule::Mode temperature_mode = TemperatureSchedule::Mode::linear;
    ResourceConfig resource;
    SearchMode mode = SearchMode::snas;
    std::uint64_t seed = 1;
    bool augment = true;
    double baseline_decay = 0.9;  // reinforce_constant only
    bool log_credits = true;

    TemperatureSchedule schedule() const;
    void validate() const;
};

/// Search settings for the planted problem: 30 epochs of batch 32 without
/// augmentation, alpha Adam at lr 0.03 without weight decay.
TrainConfig planted_train_defaults(std::uint64_t seed = 1, SearchMode mode = SearchMode::snas);

/// 0.5 lr0 (1 + cos(pi step / total)).
double cosine_lr(double lr0, std::size_t step, std::size_t total);

template <typename T>
class Sgd {
public:
    Sgd(std::vector<Tensor<T>> params, SgdConfig config);
    void step(double lr);

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<T>> velocity_;
    SgdConfig config_;
};

template <typename T>
class Adam {
public:
    Adam(std::vector<Tensor<T>> params, AdamConfig config);
    void step();
    std::size_t steps() const { return t_; }

private:
    std::vector<Tensor<T>> params_;
    std::vector<std::vector<double>> m_, v_;
    AdamConfig config_;
    std::size_t t_ = 0;
};

/// Scales gradients so their global norm is at most max_norm; returns the
/// norm before clipping.
template <typename T>
double clip_grad_norm(std::span<Tensor<T>> params, double max_norm);

struct MetricsRow {
    std::size_t epoch = 0;
    double train_loss = 0.0;
    double search_val_acc = 0.0;
    double child_val_acc = 0.0;
    double mean_entropy = 0.0;
    double expected_cost = 0.0;
    double temperature = 0.0;
    double wall_s = 0.0;
};

inline constexpr const char* kMetricsHeader =
    "epoch,train_loss,search_val_acc,child_val_acc,mean_entropy,expected_cost,temperature,wall_s";

struct CreditRow {
    std::size_t epoch = 0;
    std::size_t cell = 0;
    std::size_t edge = 0;
    double credit = 0.0;  // mean over the epoch's steps
};

struct StepStats {
    double loss = 0.0;
    double theta_grad_norm = 0.0;
    std::size_t backward_passes = 0;
    std::size_t tape_records = 0;
};

template <typename T>
class Search {
public:
    Search(const NetworkConfig& network, const TrainConfig& config);

    /// One joint update. `reward_images`/`reward_labels` feed the
    /// reinforce_constant reward and are ignored by the other modes.
    StepStats train_step(const Tensor<T>& images, std::span<const int> labels, double temperature, double theta_lr,
                         const Tensor<T>* reward_images = nullptr, std::span<const int> reward_labels = {});

    MetricsRow run_epoch(std::size_t epoch, const Dataset& train, const Dataset& val);

    /// Accuracy of the network the search optimizes: sampled masks (snas,
    /// reinforce_constant) or the softmax mixture (darts_attention).
    double search_accuracy(const Dataset& data, double temperature, Rng& rng) const;
    /// Accuracy of the derived child with the shared weights.
    double child_accuracy(const Dataset& data) const;
    Genotype genotype() const;

    Network<T>& network() { return network_; }
    const Network<T>& network() const { return network_; }
    ArchParams<T>& alpha() { return alpha_; }
    const ArchParams<T>& alpha() const { return alpha_; }
    const CostTable& costs() const { return costs_; }
    const TrainConfig& config() const { return config_; }
    const std::vector<CreditRow>& credits() const { return credits_; }

    std::vector<NamedArray> checkpoint() const;
    void load(std::span<const NamedArray> arrays);

private:
    std::vector<Tensor<T>> masks_for(double temperature, Rng& rng, bool on_tape) const;
    void add_cost_grad(std::span<const std::vector<std::size_t>> choices);
    void check_finite(double loss, std::size_t step) const;

    TrainConfig config_;
    Network<T> network_;
    ArchParams<T> alpha_;
    CostTable costs_;
    std::vector<Tensor<T>> theta_;
    Sgd<T> sgd_;
    Adam<T> adam_;
    Rng rng_;
    MovingAverageBaseline baseline_;
    std::vector<double> credit_sum_;
    std::size_t credit_steps_ = 0;
    std::vector<CreditRow> credits_;
    std::size_t epoch_ = 0;
    std::size_t step_ = 0;
};

/// Accuracy of `genotype` with the network's weights, in dataset order.
template <typename T>
double evaluate(const Network<T>& network, const Genotype& genotype, const Dataset& data, std::size_t batch_size);

struct SearchResult {
    Genotype genotype;
    std::vector<MetricsRow> metrics;
    std::vector<CreditRow> credits;
    std::vector<Genotype> genotype_history;  // derived after every epoch
    std::vector<NamedArray> checkpoint;
};

struct SearchHooks {
    std::function<void(const MetricsRow&)> on_epoch;
    /// Where to dump diagnostics before a numerical abort.
    std::filesystem::path diagnostic_dir;
};

template <typename T>
SearchResult run_search(const NetworkConfig& network, const TrainConfig& config, const Dataset& train,
                        const Dataset& val, const SearchHooks& hooks = {});

/// Trains the child of `genotype` from scratch; returns the final accuracy
/// on `val`.
template <typename T>
double train_child(const NetworkConfig& network, const Genotype& genotype, const TrainConfig& config,
                   const Dataset& train, const Dataset& val);

/// Epoch at which the derived genotype became `target` and stayed so until
/// the end, 1-based; history.size() + 1 when it never settles. Reduction
/// cells are ignored when `compare_reduce` is false.
std::size_t epochs_to_recovery(std::span<const Genotype> history, const Genotype& target, bool compare_reduce = true);

struct EtaTrial {
    double eta = 0.0;
    std::uint64_t seed = 0;
    std::size_t zero_edges = 0;
    double expected_cost = 0.0;
    double child_val_acc = 0.0;
    Genotype genotype;
};

struct EtaCalibration {
    std::vector<EtaTrial> trials;
    /// Last grid value before any seed selects zero.
    double mild = 0.0;
    /// First grid value at which every seed selects zero somewhere.
    double moderate = 0.0;
    /// First grid value at which every seed zeroes at least half the edges.
    double aggressive = 0.0;
    bool complete = false;
};

/// Searches the planted problem over `grid` (ascending) for each seed and
/// places the constraint presets. Stops once `aggressive` is found.
EtaCalibration calibrate_eta(const PlantedTaskConfig& task, const TrainConfig& train, std::span<const double> grid,
                             std::span<const std::uint64_t> seeds,
                             const std::function<void(const EtaTrial&)>& on_trial = {});

std::string metrics_csv(std::span<const MetricsRow> rows);
std::string credits_csv(std::span<const CreditRow> rows, const ParentGraph& graph);

/// Writes through a temporary sibling and renames it into place.
void write_text_atomic(const std::filesystem::path& path, const std::string& text);

}  // namespace snas
