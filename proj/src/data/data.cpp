#include "snas/data.hpp"

#include <algorithm>
#include <cmath>
#include <fstream>
#include <functional>
#include <numeric>

#include "snas/ops.hpp"

namespace snas {

Dataset Dataset::subset(std::span<const std::size_t> indices) const {
    Dataset out;
    out.channels = channels;
    out.height = height;
    out.width = width;
    out.num_classes = num_classes;
    out.normalized = normalized;
    out.images.reserve(indices.size() * image_size());
    for (std::size_t i : indices) {
        if (i >= size()) throw DataError("subset index " + std::to_string(i) + " out of range");
        const auto img = image(i);
        out.images.insert(out.images.end(), img.begin(), img.end());
        out.labels.push_back(labels[i]);
    }
    return out;
}

void Dataset::validate() const {
    if (images.size() != labels.size() * image_size()) {
        throw DataError("dataset holds " + std::to_string(images.size()) + " values for " +
                        std::to_string(labels.size()) + " images of " + std::to_string(image_size()));
    }
    for (int l : labels) {
        if (l < 0 || static_cast<std::size_t>(l) >= num_classes) {
            throw DataError("label " + std::to_string(l) + " outside [0, " + std::to_string(num_classes) + ")");
        }
    }
}

std::vector<std::uint8_t> encode_cifar_records(std::span<const CifarRecord> records) {
    std::vector<std::uint8_t> bytes;
    bytes.reserve(records.size() * kCifarRecordBytes);
    for (const auto& r : records) {
        bytes.push_back(r.label);
        bytes.insert(bytes.end(), r.pixels.begin(), r.pixels.end());
    }
    return bytes;
}

std::vector<CifarRecord> decode_cifar_records(std::span<const std::uint8_t> bytes, const std::string& source) {
    if (bytes.size() % kCifarRecordBytes != 0) {
        throw DataError((source.empty() ? std::string("CIFAR data") : source) + ": truncated, " +
                        std::to_string(bytes.size()) + " bytes is not a multiple of " +
                        std::to_string(kCifarRecordBytes));
    }
    std::vector<CifarRecord> records(bytes.size() / kCifarRecordBytes);
    for (std::size_t r = 0; r < records.size(); ++r) {
        const std::uint8_t* p = bytes.data() + r * kCifarRecordBytes;
        records[r].label = p[0];
        std::copy(p + 1, p + kCifarRecordBytes, records[r].pixels.begin());
    }
    return records;
}

void write_cifar_binary(const std::filesystem::path& path, std::span<const CifarRecord> records) {
    const auto bytes = encode_cifar_records(records);
    std::ofstream out(path, std::ios::binary | std::ios::trunc);
    if (!out) throw DataError("cannot open " + path.string() + " for writing");
    out.write(reinterpret_cast<const char*>(bytes.data()), static_cast<std::streamsize>(bytes.size()));
    if (!out) throw DataError("write failed: " + path.string());
}

std::vector<CifarRecord> read_cifar_binary(const std::filesystem::path& path, std::size_t take) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw DataError("cannot open " + path.string());
    std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)), std::istreambuf_iterator<char>());
    auto records = decode_cifar_records(bytes, path.string());
    if (take != 0 && records.size() > take) records.resize(take);
    return records;
}

Dataset records_to_dataset(std::span<const CifarRecord> records) {
    Dataset d;
    d.channels = 3;
    d.height = d.width = kCifarSide;
    d.num_classes = 10;
    d.images.reserve(records.size() * kCifarPixels);
    for (const auto& r : records) {
        if (r.label >= 10) throw DataError("CIFAR label " + std::to_string(r.label) + " is not in [0, 10)");
        d.labels.push_back(r.label);
        for (std::uint8_t p : r.pixels) d.images.push_back(static_cast<float>(p) / 255.0f);
    }
    return d;
}

Dataset downsample2x(const Dataset& data) {
    if (data.height % 2 != 0 || data.width % 2 != 0) throw DataError("downsample2x needs even image sides");
    Dataset out = data;
    out.height = data.height / 2;
    out.width = data.width / 2;
    out.images.assign(data.size() * out.image_size(), 0.0f);
    const std::size_t planes = data.size() * data.channels;
    for (std::size_t p = 0; p < planes; ++p) {
        const float* src = data.images.data() + p * data.height * data.width;
        float* dst = out.images.data() + p * out.height * out.width;
        for (std::size_t y = 0; y < out.height; ++y) {
            for (std::size_t x = 0; x < out.width; ++x) {
                const float* s = src + 2 * y * data.width + 2 * x;
                dst[y * out.width + x] = 0.25f * (s[0] + s[1] + s[data.width] + s[data.width + 1]);
            }
        }
    }
    return out;
}

Dataset resize_to(const Dataset& data, std::size_t side) {
    if (side == 0 || side == data.height) return data;
    Dataset out = data;
    while (out.height > side) out = downsample2x(out);
    if (out.height != side) {
        throw DataError("cannot resize " + std::to_string(data.height) + " to " + std::to_string(side) +
                        " by halving");
    }
    return out;
}

Normalization compute_normalization(const Dataset& data) {
    Normalization n;
    const std::size_t plane = data.height * data.width;
    for (std::size_t c = 0; c < data.channels; ++c) {
        double sum = 0.0, sq = 0.0;
        for (std::size_t i = 0; i < data.size(); ++i) {
            const float* p = data.images.data() + i * data.image_size() + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                sum += p[k];
                sq += static_cast<double>(p[k]) * p[k];
            }
        }
        const double count = static_cast<double>(data.size() * plane);
        const double mean = count > 0 ? sum / count : 0.0;
        const double var = count > 0 ? std::max(sq / count - mean * mean, 0.0) : 0.0;
        n.mean.push_back(mean);
        n.stddev.push_back(var > 0 ? std::sqrt(var) : 1.0);
    }
    return n;
}

void apply_normalization(Dataset& data, const Normalization& norm) {
    if (data.normalized) throw DataError("dataset is already normalized");
    if (norm.mean.size() != data.channels || norm.stddev.size() != data.channels) {
        throw DataError("normalization has " + std::to_string(norm.mean.size()) + " channels, data has " +
                        std::to_string(data.channels));
    }
    const std::size_t plane = data.height * data.width;
    for (std::size_t i = 0; i < data.size(); ++i) {
        for (std::size_t c = 0; c < data.channels; ++c) {
            float* p = data.images.data() + i * data.image_size() + c * plane;
            for (std::size_t k = 0; k < plane; ++k) {
                p[k] = static_cast<float>((p[k] - norm.mean[c]) / norm.stddev[c]);
            }
        }
    }
    data.normalized = true;
}

Dataset load_cifar(std::span<const std::filesystem::path> files, std::size_t take, std::size_t side,
                   Normalization* norm) {
    std::vector<CifarRecord> records;
    for (const auto& f : files) {
        const std::size_t want = take == 0 ? 0 : take - records.size();
        auto part = read_cifar_binary(f, want);
        records.insert(records.end(), part.begin(), part.end());
        if (take != 0 && records.size() >= take) break;
    }
    if (take != 0 && records.size() < take) {
        throw DataError("requested " + std::to_string(take) + " records but the files hold only " +
                        std::to_string(records.size()));
    }
    if (records.empty()) throw DataError("no CIFAR records found");
    Dataset d = resize_to(records_to_dataset(records), side);
    const Normalization n = compute_normalization(d);
    apply_normalization(d, n);
    if (norm) *norm = n;
    return d;
}

std::vector<std::filesystem::path> cifar_files(const std::filesystem::path& dir, bool train) {
    std::vector<std::filesystem::path> out;
    if (train) {
        for (int i = 1; i <= 5; ++i) {
            auto p = dir / ("data_batch_" + std::to_string(i) + ".bin");
            if (std::filesystem::exists(p)) out.push_back(p);
        }
    } else if (std::filesystem::exists(dir / "test_batch.bin")) {
        out.push_back(dir / "test_batch.bin");
    }
    if (out.empty()) throw DataError("no CIFAR-10 binary files under " + dir.string());
    return out;
}

template <typename T>
Tensor<T> batch_images(const Dataset& data, std::span<const std::size_t> indices) {
    Tensor<T> out(Shape{indices.size(), data.channels, data.height, data.width});
    auto dst = out.data();
    for (std::size_t b = 0; b < indices.size(); ++b) {
        const auto img = data.image(indices[b]);
        std::transform(img.begin(), img.end(), dst.begin() + static_cast<std::ptrdiff_t>(b * img.size()),
                       [](float v) { return static_cast<T>(v); });
    }
    return out;
}

std::vector<int> batch_labels(const Dataset& data, std::span<const std::size_t> indices) {
    std::vector<int> out;
    for (std::size_t i : indices) out.push_back(data.labels.at(i));
    return out;
}

std::vector<std::vector<std::size_t>> make_batches(std::size_t n, std::size_t batch_size, Rng* rng) {
    if (batch_size == 0) throw std::invalid_argument("batch size must be positive");
    std::vector<std::size_t> order(n);
    std::iota(order.begin(), order.end(), std::size_t{0});
    if (rng) std::shuffle(order.begin(), order.end(), *rng);
    std::vector<std::vector<std::size_t>> batches;
    for (std::size_t i = 0; i < n; i += batch_size) {
        batches.emplace_back(order.begin() + static_cast<std::ptrdiff_t>(i),
                             order.begin() + static_cast<std::ptrdiff_t>(std::min(n, i + batch_size)));
    }
    return batches;
}

std::size_t augment_padding(std::size_t side) {
    return std::max<std::size_t>(1, (4 * side + kCifarSide / 2) / kCifarSide);
}

template <typename T>
Tensor<T> crop_and_flip(const Tensor<T>& batch, std::size_t pad, std::size_t dy, std::size_t dx, bool flip) {
    if (batch.rank() != 4 || dy > 2 * pad || dx > 2 * pad) throw ShapeError("crop_and_flip: bad batch or offset");
    const std::size_t n = batch.dim(0) * batch.dim(1), h = batch.dim(2), w = batch.dim(3);
    Tensor<T> out(batch.shape());
    for (std::size_t p = 0; p < n; ++p) {
        const T* src = batch.data().data() + p * h * w;
        T* dst = out.data().data() + p * h * w;
        for (std::size_t y = 0; y < h; ++y) {
            const std::ptrdiff_t sy = static_cast<std::ptrdiff_t>(y + dy) - static_cast<std::ptrdiff_t>(pad);
            if (sy < 0 || sy >= static_cast<std::ptrdiff_t>(h)) continue;
            for (std::size_t x = 0; x < w; ++x) {
                const std::size_t ox = flip ? w - 1 - x : x;
                const std::ptrdiff_t sx = static_cast<std::ptrdiff_t>(x + dx) - static_cast<std::ptrdiff_t>(pad);
                if (sx < 0 || sx >= static_cast<std::ptrdiff_t>(w)) continue;
                dst[y * w + ox] = src[static_cast<std::size_t>(sy) * w + static_cast<std::size_t>(sx)];
            }
        }
    }
    return out;
}

template <typename T>
Tensor<T> augment(const Tensor<T>& batch, Rng& rng) {
    const std::size_t pad = augment_padding(batch.dim(2));
    std::uniform_int_distribution<std::size_t> offset(0, 2 * pad);
    Tensor<T> out(batch.shape());
    const std::size_t per_image = batch.size() / batch.dim(0);
    for (std::size_t i = 0; i < batch.dim(0); ++i) {
        const std::size_t dy = offset(rng), dx = offset(rng);
        const bool flip = uniform01(rng) < 0.5;
        Tensor<T> one(Shape{1, batch.dim(1), batch.dim(2), batch.dim(3)},
                      std::vector<T>(batch.data().begin() + static_cast<std::ptrdiff_t>(i * per_image),
                                     batch.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * per_image)));
        const Tensor<T> res = crop_and_flip(one, pad, dy, dx, flip);
        std::copy(res.data().begin(), res.data().end(),
                  out.data().begin() + static_cast<std::ptrdiff_t>(i * per_image));
    }
    return out;
}

std::pair<Dataset, Dataset> split_validation(const Dataset& data, double fraction, Rng& rng) {
    if (!(fraction > 0.0 && fraction < 1.0)) throw std::invalid_argument("validation fraction must be in (0, 1)");
    std::vector<std::size_t> order(data.size());
    std::iota(order.begin(), order.end(), std::size_t{0});
    std::shuffle(order.begin(), order.end(), rng);
    const auto n_val = static_cast<std::size_t>(std::llround(fraction * static_cast<double>(data.size())));
    if (n_val == 0 || n_val == data.size()) throw DataError("validation split leaves an empty part");
    const std::span<const std::size_t> all(order);
    return {data.subset(all.subspan(0, data.size() - n_val)), data.subset(all.subspan(data.size() - n_val))};
}

namespace {

Dataset planted_inputs(const NetworkConfig& cfg, std::size_t n, Rng& rng) {
    Dataset d;
    d.channels = cfg.in_channels;
    d.height = d.width = cfg.image_size;
    d.num_classes = cfg.num_classes;
    d.images.resize(n * d.image_size());
    for (auto& v : d.images) v = static_cast<float>(standard_normal(rng));
    d.labels.assign(n, 0);
    d.normalized = true;
    return d;
}

Tensor<double> teacher_logits(const Network<double>& teacher, const Genotype& genotype, const Dataset& data) {
    NoGradScope<double> ng;
    std::vector<std::size_t> all(data.size());
    std::iota(all.begin(), all.end(), std::size_t{0});
    return teacher.forward_child(batch_images<double>(data, all), genotype);
}

std::vector<int> argmax_rows(const Tensor<double>& logits) {
    const std::size_t n = logits.dim(0), c = logits.dim(1);
    std::vector<int> out(n);
    for (std::size_t i = 0; i < n; ++i) {
        std::vector<double> row(logits.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                                logits.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
        out[i] = static_cast<int>(argmax_lowest(row));
    }
    return out;
}

}  // namespace

PlantedTaskConfig planted_defaults(std::uint64_t seed) {
    PlantedTaskConfig c;
    c.network.in_channels = 3;
    c.network.image_size = 4;
    c.network.init_channels = 4;
    c.network.num_cells = 3;
    c.network.num_intermediate = 2;
    c.network.num_classes = 4;
    c.network.candidates = reduced_op_set();
    c.network.reduction_cells = false;
    c.genotype.normal = {OpKind::sep_conv_3x3, OpKind::skip, OpKind::sep_conv_3x3, OpKind::sep_conv_3x3,
                         OpKind::avg_pool_3x3};
    c.genotype.reduce = c.genotype.normal;
    c.num_train = 1024;
    c.num_val = 512;
    c.margin_keep = 0.25;
    c.seed = seed;
    return c;
}

PlantedTask make_planted_task(const PlantedTaskConfig& config) {
    NetworkSpec spec(config.network);
    const ParentGraph& g = spec.graph();
    for (const auto* ops : {&config.genotype.normal, &config.genotype.reduce}) {
        if (ops->size() != g.num_edges()) throw std::invalid_argument("planted genotype does not fit the parent graph");
        for (OpKind k : *ops) g.op_index(k);
    }
    Network<double> teacher(spec, stream_seed(config.seed, 1));
    Rng rng(stream_seed(config.seed, 2));
    PlantedTask task;
    task.genotype = config.genotype;
    task.network = config.network;
    if (!(config.margin_keep > 0.0 && config.margin_keep <= 1.0)) {
        throw std::invalid_argument("planted margin_keep must lie in (0, 1]");
    }
    auto pool_size = [&](std::size_t n) {
        return static_cast<std::size_t>(std::ceil(static_cast<double>(n) / config.margin_keep));
    };
    Dataset train_pool = planted_inputs(config.network, pool_size(config.num_train), rng);
    Dataset val_pool = planted_inputs(config.network, pool_size(config.num_val), rng);

    // Balance the classes on the training pool by shifting the bias.
    const Tensor<double> logits = teacher_logits(teacher, config.genotype, train_pool);
    const std::size_t c = config.network.num_classes, n = train_pool.size();
    std::vector<double> bias(c, 0.0);
    double scale_est = 0.0;
    for (double v : logits.data()) scale_est += std::abs(v);
    scale_est = std::max(scale_est / static_cast<double>(logits.size()), 1e-6);
    for (int iter = 0; iter < 500; ++iter) {
        std::vector<double> frac(c, 0.0);
        for (std::size_t i = 0; i < n; ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < c; ++k) {
                if (logits[i * c + k] + bias[k] > logits[i * c + best] + bias[best]) best = k;
            }
            frac[best] += 1.0 / static_cast<double>(n);
        }
        for (std::size_t k = 0; k < c; ++k) bias[k] -= 0.05 * scale_est * (frac[k] - 1.0 / static_cast<double>(c));
    }
    Tensor<double> b = teacher.classifier_bias();
    for (std::size_t k = 0; k < c; ++k) b[k] = bias[k];

    // Keep the most confidently labelled draws, in draw order, then label
    // the kept split as one batch so the teacher is exact on it.
    auto keep_confident = [&](const Dataset& pool, std::size_t count) {
        if (count == pool.size()) return pool;
        const Tensor<double> z = teacher_logits(teacher, config.genotype, pool);
        std::vector<double> margin(pool.size());
        for (std::size_t i = 0; i < pool.size(); ++i) {
            std::vector<double> row(z.data().begin() + static_cast<std::ptrdiff_t>(i * c),
                                    z.data().begin() + static_cast<std::ptrdiff_t>((i + 1) * c));
            std::partial_sort(row.begin(), row.begin() + 2, row.end(), std::greater<>());
            margin[i] = row[0] - row[1];
        }
        std::vector<std::size_t> order(pool.size());
        std::iota(order.begin(), order.end(), std::size_t{0});
        std::stable_sort(order.begin(), order.end(), [&](std::size_t a, std::size_t b) { return margin[a] > margin[b]; });
        order.resize(count);
        std::sort(order.begin(), order.end());
        return pool.subset(order);
    };
    task.train = keep_confident(train_pool, config.num_train);
    task.val = keep_confident(val_pool, config.num_val);

    for (Dataset* d : {&task.train, &task.val}) {
        d->labels = argmax_rows(teacher_logits(teacher, config.genotype, *d));
        if (config.label_noise > 0.0) {
            std::uniform_int_distribution<int> cls(0, static_cast<int>(c) - 1);
            for (int& l : d->labels) {
                if (uniform01(rng) < config.label_noise) l = cls(rng);
            }
        }
    }
    task.teacher_params = teacher.params().to_arrays();
    return task;
}

double teacher_accuracy(const PlantedTask& task, const Dataset& data) {
    Network<double> teacher(NetworkSpec(task.network), 0);
    teacher.params().load(task.teacher_params);
    const auto predicted = argmax_rows(teacher_logits(teacher, task.genotype, data));
    std::size_t correct = 0;
    for (std::size_t i = 0; i < data.size(); ++i) correct += predicted[i] == data.labels[i];
    return static_cast<double>(correct) / static_cast<double>(data.size());
}

template Tensor<float> batch_images<float>(const Dataset&, std::span<const std::size_t>);
template Tensor<double> batch_images<double>(const Dataset&, std::span<const std::size_t>);
template Tensor<float> crop_and_flip<float>(const Tensor<float>&, std::size_t, std::size_t, std::size_t, bool);
template Tensor<double> crop_and_flip<double>(const Tensor<double>&, std::size_t, std::size_t, std::size_t, bool);
template Tensor<float> augment<float>(const Tensor<float>&, Rng&);
template Tensor<double> augment<double>(const Tensor<double>&, Rng&);

}  // namespace snas
