// Datasets: the raw CIFAR-10 binary layout, box downsampling, per-channel
// normalization, training augmentation and synthetic planted tasks.
#pragma once

#include <array>
#include <cstdint>
#include <filesystem>
#include <span>
#include <stdexcept>
#include <vector>

#include "snas/cell.hpp"
#include "snas/checkpoint.hpp"
#include "snas/network.hpp"
#include "snas/rng.hpp"
#include "snas/tensor.hpp"

namespace snas {

class DataError : public std::runtime_error {
public:
    using std::runtime_error::runtime_error;
};

inline constexpr std::size_t kCifarSide = 32;
inline constexpr std::size_t kCifarPixels = 3 * kCifarSide * kCifarSide;
inline constexpr std::size_t kCifarRecordBytes = 1 + kCifarPixels;

struct CifarRecord {
    std::uint8_t label = 0;
    std::array<std::uint8_t, kCifarPixels> pixels{};  // channel-planar, row-major
};

struct Normalization {
    std::vector<double> mean;
    std::vector<double> stddev;
};

struct Dataset {
    std::size_t channels = 0;
    std::size_t height = 0;
    std::size_t width = 0;
    std::size_t num_classes = 0;
    std::vector<float> images;  // (N, C, H, W)
    std::vector<int> labels;
    bool normalized = false;

    std::size_t size() const { return labels.size(); }
    std::size_t image_size() const { return channels * height * width; }
    std::span<const float> image(std::size_t i) const {
        return std::span<const float>(images).subspan(i * image_size(), image_size());
    }
    Dataset subset(std::span<const std::size_t> indices) const;
    /// Throws DataError when labels or sizes are inconsistent.
    void validate() const;
};

std::vector<std::uint8_t> encode_cifar_records(std::span<const CifarRecord> records);
std::vector<CifarRecord> decode_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source = "");
void write_cifar_binary(const std::filesystem::path& path, std::span<const CifarRecord> records);
/// Reads up to `take` records (0 = all); a file whose size is not a multiple
/// of the record size is truncated and rejected.
std::vector<CifarRecord> read_cifar_binary(const std::filesystem::path& path, std::size_t take = 0);

/// Pixels scaled to [0, 1], not normalized.
Dataset records_to_dataset(std::span<const CifarRecord> records);
/// 2x2 box average; height and width must be even.
Dataset downsample2x(const Dataset& data);
/// Downsamples by repeated halving until the side equals `side`.
Dataset resize_to(const Dataset& data, std::size_t side);

Normalization compute_normalization(const Dataset& data);
/// Applies (x - mean) / std per channel; rejects already-normalized data.
void apply_normalization(Dataset& data, const Normalization& norm);

/// Reads the first `take` records across `files` in order (0 = all),
/// resizes to `side` (0 = keep 32) and normalizes with the subset's own
/// statistics, which are returned through `norm`.
Dataset load_cifar(std::span<const std::filesystem::path> files, std::size_t take, std::size_t side,
                   Normalization* norm = nullptr);
/// data_batch_1..5.bin (train) or test_batch.bin under `dir`.
std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir, bool train);

template <typename T>
Tensor<T> batch_images(const Dataset& data, std::span<const std::size_t> indices);
std::vector<int> batch_labels(const Dataset& data, std::span<const std::size_t> indices);

/// Index batches covering [0, n), shuffled when `rng` is given.
std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng);

/// Zero padding of 4 pixels at 32x32, scaled to the image side.
std::size_t augment_padding(std::size_t side);

/// Pads, crops at (dy, dx) in the padded frame and optionally mirrors.
template <typename T>
Tensor<T> crop_and_flip(const Tensor<T>& batch, std::size_t pad, std::size_t dy, std::size_t dx, bool flip);
/// Random crop offset and a fair coin for the flip, per image.
template <typename T>
Tensor<T> augment(const Tensor<T>& batch, Rng& rng);

/// Split off the last `fraction` of a shuffled index set for validation.
std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, Rng& rng);

struct PlantedTaskConfig {
    NetworkConfig network;
    Genotype genotype;
    std::size_t num_train = 512;
    std::size_t num_val = 128;
    std::uint64_t seed = 1;
    /// Probability of replacing a label by a uniformly random class.
    double label_noise = 0.0;
    /// Fraction of a larger input pool kept per split, by largest teacher
    /// logit margin. 1 keeps every draw.
    double margin_keep = 1.0;
};

struct PlantedTask {
    Genotype genotype;
    NetworkConfig network;
    std::vector<NamedArray> teacher_params;
    Dataset train;
    Dataset val;
};

/// Small planted problem used by the acceptance runs and the CLI smoke
/// config: 4x4 inputs, three normal cells with two intermediate nodes over
/// the reduced op set, four classes.
PlantedTaskConfig planted_defaults(std::uint64_t seed = 1);

/// A teacher network with random frozen weights and the given genotype
/// labels standard-normal inputs by argmax of its logits. The classifier
/// bias is adjusted so that classes are roughly balanced.
PlantedTask make_planted_task(const PlantedTaskConfig& config);

/// Accuracy of the stored teacher on `data`, evaluated in one batch.
double teacher_accuracy(const PlantedTask& task, const Dataset& data);

}  // namespace snas
