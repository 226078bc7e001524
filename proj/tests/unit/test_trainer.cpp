#include <cmath>
#include <filesystem>
#include <fstream>
#include <limits>

#include "doctest.h"
#include "snas/trainer.hpp"
#include "support.hpp"

using namespace snas;

namespace {

PlantedTaskConfig tiny_task(std::uint64_t seed) {
    PlantedTaskConfig c = planted_defaults(seed);
    c.num_train = 96;
    c.num_val = 48;
    return c;
}

TrainConfig tiny_train(std::uint64_t seed, SearchMode mode = SearchMode::snas) {
    TrainConfig c = planted_train_defaults(seed, mode);
    c.epochs = 3;
    return c;
}

bool same_metrics(const std::vector<MetricsRow>& a, const std::vector<MetricsRow>& b) {
    if (a.size() != b.size()) return false;
    for (std::size_t i = 0; i < a.size(); ++i) {
        if (a[i].train_loss != b[i].train_loss || a[i].search_val_acc != b[i].search_val_acc ||
            a[i].child_val_acc != b[i].child_val_acc || a[i].mean_entropy != b[i].mean_entropy ||
            a[i].expected_cost != b[i].expected_cost || a[i].temperature != b[i].temperature) {
            return false;
        }
    }
    return true;
}

std::vector<double> alpha_values(const std::vector<NamedArray>& arrays) {
    std::vector<double> out;
    for (const auto& a : arrays) {
        if (a.name.rfind("alpha.", 0) == 0) {
            const auto v = a.as_double();
            out.insert(out.end(), v.begin(), v.end());
        }
    }
    return out;
}

std::vector<double> flat(const std::vector<NamedArray>& arrays) {
    std::vector<double> out;
    for (const auto& a : arrays) {
        const auto v = a.as_double();
        out.insert(out.end(), v.begin(), v.end());
    }
    return out;
}

}  // namespace

TEST_CASE("cosine schedule endpoints") {
    CHECK(std::abs(cosine_lr(0.025, 0, 50) - 0.025) < 1e-12);
    CHECK(std::abs(cosine_lr(0.025, 50, 50)) < 1e-12);
    CHECK(std::abs(cosine_lr(0.025, 25, 50) - 0.0125) < 1e-12);
    CHECK(cosine_lr(0.1, 10, 50) > cosine_lr(0.1, 11, 50));
}

TEST_CASE("sgd with momentum and weight decay") {
    Tensor<double> p(Shape{2}, std::vector<double>{1.0, -2.0}, true);
    Sgd<double> sgd({p}, SgdConfig{0.1, 0.9, 0.01});
    p.grad_buffer()[0] = 0.5;
    p.grad_buffer()[1] = -1.0;
    sgd.step(0.1);
    // v = g + wd p; p -= lr v
    CHECK(p[0] == doctest::Approx(1.0 - 0.1 * (0.5 + 0.01)));
    CHECK(p[1] == doctest::Approx(-2.0 - 0.1 * (-1.0 - 0.02)));
    const double v0 = 0.5 + 0.01;
    const double p0 = p[0];
    sgd.step(0.1);
    CHECK(p[0] == doctest::Approx(p0 - 0.1 * (0.9 * v0 + 0.5 + 0.01 * p0)));
}

TEST_CASE("adam first step moves by lr against the gradient sign") {
    Tensor<double> p(Shape{3}, std::vector<double>{0.0, 0.0, 0.0}, true);
    Adam<double> adam({p}, AdamConfig{0.01, 0.5, 0.999, 1e-8, 0.0});
    p.grad_buffer()[0] = 3.0;
    p.grad_buffer()[1] = -0.2;
    adam.step();
    CHECK(p[0] == doctest::Approx(-0.01).epsilon(1e-6));
    CHECK(p[1] == doctest::Approx(0.01).epsilon(1e-6));
    CHECK(p[2] == 0.0);
    CHECK(adam.steps() == 1);
}

TEST_CASE("gradient clipping rescales to the max norm") {
    Tensor<double> a(Shape{2}, std::vector<double>{0, 0}, true), b(Shape{1}, std::vector<double>{0}, true);
    a.grad_buffer()[0] = 3;
    a.grad_buffer()[1] = 0;
    b.grad_buffer()[0] = 4;
    std::vector<Tensor<double>> ps{a, b};
    CHECK(clip_grad_norm<double>(ps, 1.0) == doctest::Approx(5.0));
    CHECK(a.grad()[0] == doctest::Approx(0.6));
    CHECK(b.grad()[0] == doctest::Approx(0.8));
    CHECK(clip_grad_norm<double>(ps, 2.0) == doctest::Approx(1.0));
    CHECK(b.grad()[0] == doctest::Approx(0.8));
}

TEST_CASE("train config validation") {
    TrainConfig c;
    CHECK_NOTHROW(c.validate());
    c.epochs = 0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.sgd.lr = 0.0;
    CHECK_THROWS(c.validate());
    c = TrainConfig{};
    c.adam.beta2 = 1.0;
    CHECK_THROWS(c.validate());
}

TEST_CASE("one backward pass per step fills both gradient sets") {
    const PlantedTask task = make_planted_task(tiny_task(1));
    for (SearchMode mode : {SearchMode::snas, SearchMode::darts_attention}) {
        Search<double> search(task.network, tiny_train(1, mode));
        std::vector<std::size_t> idx(16);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const auto images = batch_images<double>(task.train, idx);
        const auto labels = batch_labels(task.train, idx);
        const StepStats stats = search.train_step(images, labels, 1.0, 0.01);
        CHECK(stats.backward_passes == 1);
        CHECK(stats.tape_records > 0);
        CHECK(std::isfinite(stats.loss));
        double alpha_norm = 0.0;
        for (double g : search.alpha().normal.grad()) alpha_norm += g * g;
        CHECK(alpha_norm > 0.0);
        CHECK(stats.theta_grad_norm > 0.0);
    }
}

TEST_CASE("a small step on a frozen batch lowers the loss") {
    for (std::uint64_t seed = 1; seed <= 10; ++seed) {
        const PlantedTask task = make_planted_task(tiny_task(seed));
        Network<double> net(NetworkSpec(task.network), seed);
        const ParentGraph& g = net.spec().graph();
        Rng rng(seed);
        std::vector<Tensor<double>> masks;
        ArchParams<double> alpha(g.num_edges(), g.num_ops());
        for (std::size_t c = 0; c < net.spec().num_cells(); ++c) {
            NoGradScope<double> ng;
            masks.push_back(sample<double>(alpha.normal, 1.0, rng).z);
        }
        std::vector<std::size_t> idx(32);
        for (std::size_t i = 0; i < idx.size(); ++i) idx[i] = i;
        const auto images = batch_images<double>(task.train, idx);
        const auto labels = batch_labels(task.train, idx);
        auto loss = [&] {
            NoGradScope<double> ng;
            return cross_entropy(net.forward(images, masks), labels).item();
        };
        const double before = loss();
        std::vector<Tensor<double>> theta;
        for (auto& [_, t] : net.params()) theta.push_back(t);
        Sgd<double> sgd(theta, SgdConfig{1e-3, 0.0, 0.0});
        Tape<double> tape;
        {
            TapeScope<double> scope(tape);
            tape.backward(cross_entropy(net.forward(images, masks), labels));
        }
        sgd.step(1e-3);
        CHECK_MESSAGE(loss() < before, "seed " << seed);
    }
}

TEST_CASE("zero eta leaves the alpha trajectory independent of the cost model") {
    const PlantedTask task = make_planted_task(tiny_task(2));
    TrainConfig a = tiny_train(2);
    TrainConfig b = a;
    b.resource.w_params = 0.0;
    b.resource.w_flops = 5.0;
    b.resource.w_mac = 0.0;
    const auto ra = run_search<double>(task.network, a, task.train, task.val);
    const auto rb = run_search<double>(task.network, b, task.train, task.val);
    CHECK(alpha_values(ra.checkpoint) == alpha_values(rb.checkpoint));
    TrainConfig c = a;
    c.resource.eta = 0.05;
    const auto rc = run_search<double>(task.network, c, task.train, task.val);
    CHECK(alpha_values(ra.checkpoint) != alpha_values(rc.checkpoint));
}

TEST_CASE("seed-fixed search is reproducible") {
    const PlantedTask task = make_planted_task(tiny_task(3));
    for (SearchMode mode : {SearchMode::snas, SearchMode::darts_attention, SearchMode::reinforce_constant}) {
        const TrainConfig cfg = tiny_train(3, mode);
        const auto r1 = run_search<float>(task.network, cfg, task.train, task.val);
        const auto r2 = run_search<float>(task.network, cfg, task.train, task.val);
        CHECK(same_metrics(r1.metrics, r2.metrics));
        CHECK(r1.genotype == r2.genotype);
        REQUIRE(r1.checkpoint.size() == r2.checkpoint.size());
        for (std::size_t i = 0; i < r1.checkpoint.size(); ++i) CHECK(r1.checkpoint[i].values == r2.checkpoint[i].values);
        CHECK(metrics_csv(r1.metrics).substr(0, 40) == metrics_csv(r2.metrics).substr(0, 40));
    }
    const auto other = run_search<float>(task.network, tiny_train(4), task.train, task.val);
    const auto base = run_search<float>(task.network, tiny_train(3), task.train, task.val);
    CHECK_FALSE(same_metrics(other.metrics, base.metrics));
}

TEST_CASE("metrics have one row per epoch and credits per cell edge") {
    const PlantedTask task = make_planted_task(tiny_task(5));
    const TrainConfig cfg = tiny_train(5);
    std::size_t calls = 0;
    SearchHooks hooks;
    hooks.on_epoch = [&](const MetricsRow& r) { CHECK(r.epoch == calls++); };
    const auto r = run_search<float>(task.network, cfg, task.train, task.val, hooks);
    CHECK(calls == cfg.epochs);
    CHECK(r.metrics.size() == cfg.epochs);
    CHECK(r.genotype_history.size() == cfg.epochs);
    const NetworkSpec spec(task.network);
    CHECK(r.credits.size() == cfg.epochs * spec.num_cells() * spec.graph().num_edges());
    for (const auto& c : r.credits) CHECK(std::isfinite(c.credit));
    CHECK(r.metrics.front().temperature == doctest::Approx(1.0));
    CHECK(r.metrics.back().temperature == doctest::Approx(cfg.min_temperature));
    const std::string csv = metrics_csv(r.metrics);
    CHECK(csv.rfind(std::string(kMetricsHeader) + "\n", 0) == 0);
    CHECK(std::count(csv.begin(), csv.end(), '\n') == static_cast<long>(cfg.epochs + 1));
    const std::string ccsv = credits_csv(r.credits, spec.graph());
    CHECK(ccsv.rfind("epoch,cell,edge,from,to,credit\n", 0) == 0);
}

TEST_CASE("hard argmax forward and derived child evaluate identically") {
    const PlantedTask task = make_planted_task(tiny_task(6));
    const auto r = run_search<double>(task.network, tiny_train(6), task.train, task.val);
    Search<double> search(task.network, tiny_train(6));
    search.load(r.checkpoint);
    const Genotype g = search.genotype();
    CHECK(g == r.genotype);
    const double child = evaluate(search.network(), g, task.val, 32);
    CHECK(child == doctest::Approx(r.metrics.back().child_val_acc));

    NoGradScope<double> ng;
    BnModeScope bn(BnMode::running);
    std::vector<Tensor<double>> masks;
    for (std::size_t c = 0; c < search.network().spec().num_cells(); ++c) {
        masks.push_back(one_hot_mask<double>(g.normal, search.network().spec().graph()));
    }
    std::size_t correct = 0;
    for (const auto& batch : make_batches(task.val.size(), 32, nullptr)) {
        const auto out = search.network().forward(batch_images<double>(task.val, batch), masks);
        const auto labels = batch_labels(task.val, batch);
        for (std::size_t i = 0; i < labels.size(); ++i) {
            std::size_t best = 0;
            for (std::size_t k = 1; k < out.dim(1); ++k) {
                if (out[i * out.dim(1) + k] > out[i * out.dim(1) + best]) best = k;
            }
            correct += static_cast<int>(best) == labels[i];
        }
    }
    CHECK(static_cast<double>(correct) / static_cast<double>(task.val.size()) == doctest::Approx(child));
}

TEST_CASE("running statistics move toward the data and are checkpointed") {
    const PlantedTask task = make_planted_task(tiny_task(7));
    Network<float> net(NetworkSpec(task.network), 7);
    CHECK(net.params().num_buffers() > 0);
    const auto before = flat(net.params().to_arrays());
    std::vector<std::size_t> idx{0, 1, 2, 3};
    const auto images = batch_images<float>(task.train, idx);
    const Genotype g = task.genotype;
    {
        NoGradScope<float> ng;
        net.forward_child(images, g);
    }
    CHECK(flat(net.params().to_arrays()) == before);
    Tape<float> tape;
    {
        TapeScope<float> scope(tape);
        net.forward_child(images, g);
    }
    CHECK(flat(net.params().to_arrays()) != before);
    Network<float> copy(NetworkSpec(task.network), 99);
    copy.params().load(net.params().to_arrays());
    CHECK(flat(copy.params().to_arrays()) == flat(net.params().to_arrays()));
}

TEST_CASE("non-finite loss aborts with a diagnostic") {
    const PlantedTask task = make_planted_task(tiny_task(8));
    Dataset bad = task.train;
    bad.images[5] = std::numeric_limits<float>::quiet_NaN();
    const auto dir = std::filesystem::temp_directory_path() / "snas_trainer_nan";
    std::filesystem::remove_all(dir);
    SearchHooks hooks;
    hooks.diagnostic_dir = dir;
    CHECK_THROWS_AS(run_search<float>(task.network, tiny_train(8), bad, task.val, hooks), NumericalError);
    CHECK(std::filesystem::exists(dir / "diagnostic.txt"));
    std::ifstream in(dir / "diagnostic.txt");
    std::string first;
    std::getline(in, first);
    CHECK(first.find("non-finite") != std::string::npos);
    std::filesystem::remove_all(dir);
}

TEST_CASE("search rejects mismatched data") {
    PlantedTaskConfig tc = tiny_task(9);
    const PlantedTask task = make_planted_task(tc);
    NetworkConfig wrong = task.network;
    wrong.image_size = 8;
    CHECK_THROWS_AS(run_search<float>(wrong, tiny_train(9), task.train, task.val), DataError);
    CHECK_THROWS_AS(run_search<float>(task.network, tiny_train(9), task.train, Dataset{}), DataError);
}

TEST_CASE("epochs to recovery") {
    const Genotype t{{OpKind::skip, OpKind::zero}, {OpKind::zero, OpKind::zero}};
    const Genotype u{{OpKind::skip, OpKind::skip}, {OpKind::zero, OpKind::zero}};
    const Genotype r{{OpKind::skip, OpKind::zero}, {OpKind::skip, OpKind::zero}};
    const std::vector<Genotype> settles{u, t, u, t, t};
    CHECK(epochs_to_recovery(settles, t) == 4);
    const std::vector<Genotype> never{t, t, u};
    CHECK(epochs_to_recovery(never, t) == 4);
    const std::vector<Genotype> always{t, t};
    CHECK(epochs_to_recovery(always, t) == 1);
    const std::vector<Genotype> reduce_differs{r, r};
    CHECK(epochs_to_recovery(reduce_differs, t) == 3);
    CHECK(epochs_to_recovery(reduce_differs, t, false) == 1);
    CHECK(epochs_to_recovery(std::vector<Genotype>{}, t) == 1);
}

TEST_CASE("atomic text write replaces the file") {
    const auto path = std::filesystem::temp_directory_path() / "snas_atomic.txt";
    write_text_atomic(path, "first");
    write_text_atomic(path, "second");
    std::ifstream in(path);
    std::string s;
    std::getline(in, s);
    CHECK(s == "second");
    CHECK_FALSE(std::filesystem::exists(path.string() + ".tmp"));
    std::filesystem::remove(path);
}

TEST_CASE("training the planted genotype from scratch recovers the teacher") {
    PlantedTaskConfig tc = planted_defaults(1);
    tc.num_train = 2048;
    const PlantedTask task = make_planted_task(tc);
    const double acc = train_child<float>(task.network, task.genotype, planted_train_defaults(1), task.train, task.val);
    CHECK(acc >= 0.95);
}
