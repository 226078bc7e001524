#include <algorithm>
#include <cctype>
#include <cerrno>
#include <charconv>
#include <cstdlib>
#include <functional>
#include <sstream>

#include "snas/cli.hpp"

namespace snas {

namespace {

std::string trim(const std::string& s) {
    const auto b = s.find_first_not_of(" \t\r");
    if (b == std::string::npos) return "";
    const auto e = s.find_last_not_of(" \t\r");
    return s.substr(b, e - b + 1);
}

// Shortest text that reads back to the same double.
std::string fmt_double(double v) {
    char buf[40];
    const auto res = std::to_chars(buf, buf + sizeof buf, v);
    return std::string(buf, res.ptr);
}

double parse_double(const std::string& key, const std::string& v) {
    errno = 0;
    char* end = nullptr;
    const double d = std::strtod(v.c_str(), &end);
    if (v.empty() || end != v.c_str() + v.size() || errno == ERANGE) {
        throw ConfigError("'" + key + "': expected a number, got '" + v + "'");
    }
    return d;
}

std::uint64_t parse_u64(const std::string& key, const std::string& v) {
    if (v.empty() || !std::all_of(v.begin(), v.end(), [](unsigned char c) { return std::isdigit(c); })) {
        throw ConfigError("'" + key + "': expected a non-negative integer, got '" + v + "'");
    }
    errno = 0;
    const unsigned long long u = std::strtoull(v.c_str(), nullptr, 10);
    if (errno == ERANGE) throw ConfigError("'" + key + "': value out of range: " + v);
    return u;
}

std::size_t parse_size(const std::string& key, const std::string& v) {
    return static_cast<std::size_t>(parse_u64(key, v));
}

bool parse_bool(const std::string& key, const std::string& v) {
    if (v == "true" || v == "1" || v == "yes") return true;
    if (v == "false" || v == "0" || v == "no") return false;
    throw ConfigError("'" + key + "': expected true or false, got '" + v + "'");
}

std::vector<std::string> split_list(const std::string& v) {
    std::vector<std::string> out;
    std::stringstream ss(v);
    std::string item;
    while (std::getline(ss, item, ',')) out.push_back(trim(item));
    return out;
}

std::vector<OpKind> parse_ops(const std::string& key, const std::string& v) {
    std::vector<OpKind> ops;
    for (const auto& name : split_list(v)) {
        const auto op = parse_op(name);
        if (!op) throw ConfigError("'" + key + "': unknown operation '" + name + "'");
        ops.push_back(*op);
    }
    if (ops.empty()) throw ConfigError("'" + key + "': empty operation list");
    return ops;
}

std::string render_ops(const std::vector<OpKind>& ops) {
    std::string out;
    for (std::size_t i = 0; i < ops.size(); ++i) {
        if (i) out += ',';
        out += op_name(ops[i]);
    }
    return out;
}

std::string render_candidates(const std::vector<OpKind>& ops) {
    if (ops == reduced_op_set()) return "reduced";
    if (ops == full_op_set()) return "full";
    return render_ops(ops);
}

struct Field {
    std::string key;
    std::function<void(RunConfig&, const std::string&)> set;
    std::function<std::string(const RunConfig&)> get;
};

#define SIZE_FIELD(name, member)                                                              \
    Field {                                                                                   \
        name, [](RunConfig& c, const std::string& v) { c.member = parse_size(name, v); },     \
            [](const RunConfig& c) { return std::to_string(c.member); }                       \
    }
#define DOUBLE_FIELD(name, member)                                                            \
    Field {                                                                                   \
        name, [](RunConfig& c, const std::string& v) { c.member = parse_double(name, v); },   \
            [](const RunConfig& c) { return fmt_double(c.member); }                           \
    }
#define BOOL_FIELD(name, member)                                                              \
    Field {                                                                                   \
        name, [](RunConfig& c, const std::string& v) { c.member = parse_bool(name, v); },     \
            [](const RunConfig& c) { return std::string(c.member ? "true" : "false"); }       \
    }

const std::vector<Field>& fields() {
    static const std::vector<Field> table = {
        Field{"dataset",
              [](RunConfig& c, const std::string& v) {
                  if (v == "planted") c.dataset = DatasetKind::planted;
                  else if (v == "cifar") c.dataset = DatasetKind::cifar;
                  else throw ConfigError("'dataset': expected planted or cifar, got '" + v + "'");
              },
              [](const RunConfig& c) { return std::string(c.dataset == DatasetKind::planted ? "planted" : "cifar"); }},
        Field{"precision",
              [](RunConfig& c, const std::string& v) {
                  if (v == "float") c.precision = Precision::f32;
                  else if (v == "double") c.precision = Precision::f64;
                  else throw ConfigError("'precision': expected float or double, got '" + v + "'");
              },
              [](const RunConfig& c) { return std::string(c.precision == Precision::f32 ? "float" : "double"); }},
        Field{"out_dir", [](RunConfig& c, const std::string& v) { c.out_dir = v; },
              [](const RunConfig& c) { return c.out_dir.string(); }},
        Field{"seed",
              [](RunConfig& c, const std::string& v) {
                  c.train.seed = parse_u64("seed", v);
                  c.planted.seed = c.train.seed;
              },
              [](const RunConfig& c) { return std::to_string(c.train.seed); }},
        Field{"mode",
              [](RunConfig& c, const std::string& v) {
                  const auto m = parse_mode(v);
                  if (!m) throw ConfigError("'mode': expected snas, darts_attention or reinforce_constant, got '" + v + "'");
                  c.train.mode = *m;
              },
              [](const RunConfig& c) { return std::string(mode_name(c.train.mode)); }},
        SIZE_FIELD("epochs", train.epochs),
        SIZE_FIELD("batch_size", train.batch_size),
        DOUBLE_FIELD("lr", train.sgd.lr),
        DOUBLE_FIELD("momentum", train.sgd.momentum),
        DOUBLE_FIELD("weight_decay", train.sgd.weight_decay),
        DOUBLE_FIELD("alpha_lr", train.adam.lr),
        DOUBLE_FIELD("alpha_beta1", train.adam.beta1),
        DOUBLE_FIELD("alpha_beta2", train.adam.beta2),
        DOUBLE_FIELD("alpha_eps", train.adam.eps),
        DOUBLE_FIELD("alpha_weight_decay", train.adam.weight_decay),
        DOUBLE_FIELD("grad_clip", train.grad_clip),
        DOUBLE_FIELD("initial_temperature", train.initial_temperature),
        DOUBLE_FIELD("min_temperature", train.min_temperature),
        Field{"temperature_schedule",
              [](RunConfig& c, const std::string& v) {
                  if (v == "linear") c.train.temperature_mode = TemperatureSchedule::Mode::linear;
                  else if (v == "exponential") c.train.temperature_mode = TemperatureSchedule::Mode::exponential;
                  else throw ConfigError("'temperature_schedule': expected linear or exponential, got '" + v + "'");
              },
              [](const RunConfig& c) {
                  return std::string(c.train.temperature_mode == TemperatureSchedule::Mode::linear ? "linear"
                                                                                                   : "exponential");
              }},
        Field{"constraint",
              [](RunConfig& c, const std::string& v) {
                  if (v == "custom") return;
                  const auto level = parse_constraint(v);
                  if (!level) {
                      throw ConfigError("'constraint': expected none, mild, moderate, aggressive or custom, got '" + v + "'");
                  }
                  c.train.resource.eta = ResourceConfig::preset_eta(*level);
              },
              [](const RunConfig& c) {
                  for (auto level : {ConstraintLevel::none, ConstraintLevel::mild, ConstraintLevel::moderate,
                                     ConstraintLevel::aggressive}) {
                      if (ResourceConfig::preset_eta(level) == c.train.resource.eta) {
                          return std::string(constraint_name(level));
                      }
                  }
                  return std::string("custom");
              }},
        DOUBLE_FIELD("eta", train.resource.eta),
        DOUBLE_FIELD("w_params", train.resource.w_params),
        DOUBLE_FIELD("w_flops", train.resource.w_flops),
        DOUBLE_FIELD("w_mac", train.resource.w_mac),
        BOOL_FIELD("augment", train.augment),
        DOUBLE_FIELD("baseline_decay", train.baseline_decay),
        BOOL_FIELD("log_credits", train.log_credits),
        SIZE_FIELD("in_channels", network.in_channels),
        SIZE_FIELD("image_size", network.image_size),
        SIZE_FIELD("init_channels", network.init_channels),
        SIZE_FIELD("num_cells", network.num_cells),
        SIZE_FIELD("num_intermediate", network.num_intermediate),
        SIZE_FIELD("num_classes", network.num_classes),
        Field{"candidates",
              [](RunConfig& c, const std::string& v) {
                  if (v == "reduced") c.network.candidates = reduced_op_set();
                  else if (v == "full") c.network.candidates = full_op_set();
                  else c.network.candidates = parse_ops("candidates", v);
              },
              [](const RunConfig& c) { return render_candidates(c.network.candidates); }},
        BOOL_FIELD("reduction_cells", network.reduction_cells),
        SIZE_FIELD("planted_train", planted.num_train),
        SIZE_FIELD("planted_val", planted.num_val),
        DOUBLE_FIELD("planted_margin_keep", planted.margin_keep),
        DOUBLE_FIELD("planted_label_noise", planted.label_noise),
        Field{"planted_normal",
              [](RunConfig& c, const std::string& v) { c.planted.genotype.normal = parse_ops("planted_normal", v); },
              [](const RunConfig& c) { return render_ops(c.planted.genotype.normal); }},
        Field{"planted_reduce",
              [](RunConfig& c, const std::string& v) { c.planted.genotype.reduce = parse_ops("planted_reduce", v); },
              [](const RunConfig& c) { return render_ops(c.planted.genotype.reduce); }},
        Field{"data_dir", [](RunConfig& c, const std::string& v) { c.data_dir = v; },
              [](const RunConfig& c) { return c.data_dir.string(); }},
        SIZE_FIELD("take", take),
        SIZE_FIELD("resize", resize),
        DOUBLE_FIELD("val_fraction", val_fraction),
    };
    return table;
}

#undef SIZE_FIELD
#undef DOUBLE_FIELD
#undef BOOL_FIELD

}  // namespace

RunConfig::RunConfig() = default;

const std::vector<std::string>& config_keys() {
    static const std::vector<std::string> keys = [] {
        std::vector<std::string> k;
        for (const auto& f : fields()) k.push_back(f.key);
        return k;
    }();
    return keys;
}

void apply_setting(RunConfig& config, const std::string& key, const std::string& value) {
    for (const auto& f : fields()) {
        if (f.key == key) {
            f.set(config, value);
            return;
        }
    }
    throw ConfigError("unknown config key '" + key + "'");
}

std::vector<std::pair<std::string, std::string>> parse_config_text(const std::string& text, const std::string& source) {
    std::vector<std::pair<std::string, std::string>> out;
    std::istringstream in(text);
    std::string line;
    std::size_t lineno = 0;
    while (std::getline(in, line)) {
        ++lineno;
        if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
        line = trim(line);
        if (line.empty()) continue;
        const auto eq = line.find('=');
        if (eq == std::string::npos) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": expected 'key = value'");
        }
        std::string key = trim(line.substr(0, eq));
        std::string value = trim(line.substr(eq + 1));
        if (key.empty()) throw ConfigError(source + ":" + std::to_string(lineno) + ": missing key");
        for (const auto& [k, _] : out) {
            if (k == key) throw ConfigError(source + ":" + std::to_string(lineno) + ": duplicate key '" + key + "'");
        }
        const auto& keys = config_keys();
        if (std::find(keys.begin(), keys.end(), key) == keys.end()) {
            throw ConfigError(source + ":" + std::to_string(lineno) + ": unknown config key '" + key + "'");
        }
        out.emplace_back(std::move(key), std::move(value));
    }
    return out;
}

std::string render_config(const RunConfig& config) {
    std::string out;
    for (const auto& f : fields()) out += f.key + " = " + f.get(config) + "\n";
    return out;
}

std::vector<std::pair<std::string, std::string>> environment_settings() {
    std::vector<std::pair<std::string, std::string>> out;
    for (const auto& key : config_keys()) {
        std::string env = "SNAS_";
        for (char ch : key) env += static_cast<char>(std::toupper(static_cast<unsigned char>(ch)));
        if (const char* v = std::getenv(env.c_str())) out.emplace_back(key, v);
    }
    return out;
}

void validate_config(const RunConfig& config) {
    try {
        config.train.validate();
        NetworkSpec spec(config.network);
        if (config.dataset == DatasetKind::planted) {
            PlantedTaskConfig p = config.planted;
            p.network = config.network;
            const std::size_t edges = spec.graph().num_edges();
            if (p.genotype.normal.size() != edges || p.genotype.reduce.size() != edges) {
                throw ConfigError("planted genotype has " + std::to_string(p.genotype.normal.size()) + "/" +
                                  std::to_string(p.genotype.reduce.size()) + " ops but the cell has " +
                                  std::to_string(edges) + " edges");
            }
            for (const auto* ops : {&p.genotype.normal, &p.genotype.reduce}) {
                for (OpKind k : *ops) {
                    const auto& cand = config.network.candidates;
                    if (std::find(cand.begin(), cand.end(), k) == cand.end()) {
                        throw ConfigError("planted genotype uses " + std::string(op_name(k)) +
                                          ", which is not a candidate");
                    }
                }
            }
            if (p.num_train == 0 || p.num_val == 0) throw ConfigError("planted_train and planted_val must be positive");
            if (!(p.margin_keep > 0.0 && p.margin_keep <= 1.0)) throw ConfigError("planted_margin_keep must lie in (0, 1]");
            if (!(p.label_noise >= 0.0 && p.label_noise <= 1.0)) throw ConfigError("planted_label_noise must lie in [0, 1]");
        } else {
            if (config.data_dir.empty()) throw ConfigError("dataset = cifar needs data_dir");
            if (config.network.in_channels != 3 || config.network.num_classes != 10) {
                throw ConfigError("dataset = cifar needs in_channels = 3 and num_classes = 10");
            }
            if (config.network.image_size != config.resize) {
                throw ConfigError("image_size (" + std::to_string(config.network.image_size) + ") must equal resize (" +
                                  std::to_string(config.resize) + ") for cifar");
            }
            if (!(config.val_fraction > 0.0 && config.val_fraction < 1.0)) {
                throw ConfigError("val_fraction must lie in (0, 1)");
            }
        }
    } catch (const ConfigError&) {
        throw;
    } catch (const std::invalid_argument& e) {
        throw ConfigError(e.what());
    } catch (const std::domain_error& e) {
        throw ConfigError(e.what());
    }
}

RunData load_run_data(const RunConfig& config) {
    RunData data;
    if (config.dataset == DatasetKind::planted) {
        PlantedTaskConfig p = config.planted;
        p.network = config.network;
        PlantedTask task = make_planted_task(p);
        data.train = std::move(task.train);
        data.val = std::move(task.val);
        data.planted_genotype = task.genotype;
        return data;
    }
    const auto files = cifar_files(config.data_dir, true);
    const Dataset all = load_cifar(files, config.take, config.resize, &data.normalization);
    Rng rng(stream_seed(config.train.seed, 3));
    auto [train, val] = split_validation(all, config.val_fraction, rng);
    data.train = std::move(train);
    data.val = std::move(val);
    return data;
}

}  // namespace snas
