#pragma once

// Experiment configuration: a flat `key = value` text format, named presets
// and the mapping onto SolverConfig.
//
// Lines are `key = value`; `#` starts a comment. Keys:
//   preset           bimodal1d | trivial1d | circles-to-moons | circles-to-moons-dispersed | custom
//   dim              state dimension (1 or 2)
//   lambda_inv       1 / lambda
//   steps iters batch_x batch_t seed learning_rate kernel_alpha
//   sigma            diffusion sigma * I
//   drift_a drift_c  affine drift a * x + c (per axis)
//   hidden_layers hidden_width param_target   width 0 picks the equal width closest to param_target
//   initial target   point | normal | bimodal | two_circles | double_crescent
//   initial_mean initial_var target_mean target_var   (point / normal)
//   dataset_count dataset_noise dataset_seed inner_radius outer_radius arc_radius
//   horizontal_offset vertical_offset
//   eval_paths eval_seed oracle oracle_points

#include <charconv>
#include <cmath>
#include <fstream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "sbmmd/control_net.hpp"
#include "sbmmd/datasets.hpp"
#include "sbmmd/error.hpp"
#include "sbmmd/io.hpp"
#include "sbmmd/trainer.hpp"

namespace sbmmd {

struct ExperimentConfig {
  std::string preset = "bimodal1d";
  int dim = 1;
  double lambda_inv = 0.005;
  int steps = 256;
  int iters = 5000;
  int batch_x = 128;
  int batch_t = 128;
  std::uint64_t seed = 0;
  double learning_rate = 1e-3;
  double kernel_alpha = 1.0;
  double sigma = 1.0;
  double drift_a = 0.0;
  double drift_c = 0.0;
  int hidden_layers = 2;
  int hidden_width = 0;
  std::int64_t param_target = 641;
  std::string initial = "point";
  double initial_mean = 0.0;
  double initial_var = 0.0;
  std::string target = "bimodal";
  double target_mean = 0.0;
  double target_var = 1.0;
  std::int64_t dataset_count = 1000;
  double dataset_noise = 0.05;
  std::uint64_t dataset_seed = 0;
  double inner_radius = 0.5;
  double outer_radius = 1.0;
  double arc_radius = 1.0;
  double horizontal_offset = 0.5;
  double vertical_offset = 0.5;
  std::int64_t eval_paths = 200000;
  std::uint64_t eval_seed = 1;
  bool oracle = true;
  int oracle_points = 2001;

  /// Apply one key/value pair; unknown keys and bad values are ConfigErrors.
  void set(const std::string& key, const std::string& value) {
    auto num = [&]() {
      try {
        return io::parse_double(value);
      } catch (const IoError&) {
        throw ConfigError("config key '" + key + "': not a number: '" + value + "'");
      }
    };
    auto integer = [&]() -> std::int64_t {
      const double v = num();
      if (v != std::floor(v)) throw ConfigError("config key '" + key + "' must be an integer");
      return static_cast<std::int64_t>(v);
    };
    auto unsigned_int = [&]() -> std::uint64_t {
      std::uint64_t v = 0;
      auto [ptr, ec] = std::from_chars(value.data(), value.data() + value.size(), v);
      if (ec != std::errc() || ptr != value.data() + value.size()) {
        throw ConfigError("config key '" + key + "' must be a nonnegative integer");
      }
      return v;
    };
    if (key == "preset") preset = value;
    else if (key == "dim") dim = static_cast<int>(integer());
    else if (key == "lambda_inv") lambda_inv = num();
    else if (key == "steps") steps = static_cast<int>(integer());
    else if (key == "iters") iters = static_cast<int>(integer());
    else if (key == "batch_x") batch_x = static_cast<int>(integer());
    else if (key == "batch_t") batch_t = static_cast<int>(integer());
    else if (key == "seed") seed = unsigned_int();
    else if (key == "learning_rate") learning_rate = num();
    else if (key == "kernel_alpha") kernel_alpha = num();
    else if (key == "sigma") sigma = num();
    else if (key == "drift_a") drift_a = num();
    else if (key == "drift_c") drift_c = num();
    else if (key == "hidden_layers") hidden_layers = static_cast<int>(integer());
    else if (key == "hidden_width") hidden_width = static_cast<int>(integer());
    else if (key == "param_target") param_target = integer();
    else if (key == "initial") initial = value;
    else if (key == "initial_mean") initial_mean = num();
    else if (key == "initial_var") initial_var = num();
    else if (key == "target") target = value;
    else if (key == "target_mean") target_mean = num();
    else if (key == "target_var") target_var = num();
    else if (key == "dataset_count") dataset_count = integer();
    else if (key == "dataset_noise") dataset_noise = num();
    else if (key == "dataset_seed") dataset_seed = unsigned_int();
    else if (key == "inner_radius") inner_radius = num();
    else if (key == "outer_radius") outer_radius = num();
    else if (key == "arc_radius") arc_radius = num();
    else if (key == "horizontal_offset") horizontal_offset = num();
    else if (key == "vertical_offset") vertical_offset = num();
    else if (key == "eval_paths") eval_paths = integer();
    else if (key == "eval_seed") eval_seed = unsigned_int();
    else if (key == "oracle") oracle = integer() != 0;
    else if (key == "oracle_points") oracle_points = static_cast<int>(integer());
    else throw ConfigError("unknown config key '" + key + "'");
  }

  /// Every key in a fixed order; parse(echo()) reproduces the config exactly.
  std::vector<std::pair<std::string, std::string>> entries() const {
    auto d = [](double v) { return io::format_double(v); };
    return {
        {"preset", preset},
        {"dim", std::to_string(dim)},
        {"lambda_inv", d(lambda_inv)},
        {"steps", std::to_string(steps)},
        {"iters", std::to_string(iters)},
        {"batch_x", std::to_string(batch_x)},
        {"batch_t", std::to_string(batch_t)},
        {"seed", std::to_string(seed)},
        {"learning_rate", d(learning_rate)},
        {"kernel_alpha", d(kernel_alpha)},
        {"sigma", d(sigma)},
        {"drift_a", d(drift_a)},
        {"drift_c", d(drift_c)},
        {"hidden_layers", std::to_string(hidden_layers)},
        {"hidden_width", std::to_string(hidden_width)},
        {"param_target", std::to_string(param_target)},
        {"initial", initial},
        {"initial_mean", d(initial_mean)},
        {"initial_var", d(initial_var)},
        {"target", target},
        {"target_mean", d(target_mean)},
        {"target_var", d(target_var)},
        {"dataset_count", std::to_string(dataset_count)},
        {"dataset_noise", d(dataset_noise)},
        {"dataset_seed", std::to_string(dataset_seed)},
        {"inner_radius", d(inner_radius)},
        {"outer_radius", d(outer_radius)},
        {"arc_radius", d(arc_radius)},
        {"horizontal_offset", d(horizontal_offset)},
        {"vertical_offset", d(vertical_offset)},
        {"eval_paths", std::to_string(eval_paths)},
        {"eval_seed", std::to_string(eval_seed)},
        {"oracle", oracle ? "1" : "0"},
        {"oracle_points", std::to_string(oracle_points)},
    };
  }

  std::string echo() const {
    std::ostringstream os;
    for (const auto& [k, v] : entries()) os << k << " = " << v << '\n';
    return os.str();
  }

  bool operator==(const ExperimentConfig&) const = default;

  std::vector<int> net_dims() const {
    require(hidden_layers >= 1, "hidden_layers must be at least 1");
    if (hidden_width > 0) {
      std::vector<int> dims{dim + 1};
      for (int l = 0; l < hidden_layers; ++l) dims.push_back(hidden_width);
      dims.push_back(dim);
      return dims;
    }
    return ControlNet::equal_width_dims(dim + 1, dim, hidden_layers, param_target);
  }

  ToyDatasetSpec dataset_spec(DatasetKind kind) const {
    ToyDatasetSpec s;
    s.kind = kind;
    s.count = dataset_count;
    s.inner_radius = inner_radius;
    s.outer_radius = outer_radius;
    s.arc_radius = arc_radius;
    s.horizontal_offset = horizontal_offset;
    s.vertical_offset = vertical_offset;
    s.noise = dataset_noise;
    s.seed = dataset_seed;
    return s;
  }

  Law make_law(const std::string& kind, double mean, double var) const {
    if (kind == "point") return GaussianMixture::point_mass(Vector::Constant(dim, mean));
    if (kind == "normal") {
      require(var > 0.0, "normal law needs a positive variance");
      return GaussianMixture::normal(Vector::Constant(dim, mean), Vector::Constant(dim, var));
    }
    if (kind == "bimodal") {
      require(dim == 1, "the bimodal target is one-dimensional");
      return GaussianMixture::bimodal_1d();
    }
    if (kind == "two_circles" || kind == "double_crescent") {
      require(dim == 2, "toy datasets are two-dimensional");
      return generate_dataset(dataset_spec(parse_dataset_kind(kind)));
    }
    throw ConfigError("unknown law kind '" + kind + "' (point | normal | bimodal | two_circles | double_crescent)");
  }

  SdeModel model() const {
    require(sigma > 0.0, "sigma must be positive");
    if (drift_a == 0.0 && drift_c == 0.0) return SdeModel::brownian(dim, sigma);
    return SdeModel::affine(drift_a * Matrix::Identity(dim, dim), Vector::Constant(dim, drift_c),
                            sigma * Matrix::Identity(dim, dim));
  }

  void validate() const {
    require(dim == 1 || dim == 2, "dim must be 1 or 2");
    require(lambda_inv > 0.0, "lambda_inv must be positive");
    require(eval_paths >= 2, "eval_paths must be at least 2");
    require(oracle_points >= 3, "oracle_points must be at least 3");
    require(hidden_width >= 0, "hidden_width must be nonnegative");
  }

  SolverConfig solver() const {
    validate();
    SolverConfig c;
    c.lambda = 1.0 / lambda_inv;
    c.steps = steps;
    c.iterations = iters;
    c.batch_x = batch_x;
    c.batch_t = batch_t;
    c.seed = seed;
    c.learning_rate = learning_rate;
    c.kernel = Kernel::gaussian(kernel_alpha, dim);
    c.model = model();
    c.initial = make_law(initial, initial_mean, initial_var);
    c.target = make_law(target, target_mean, target_var);
    c.net_dims = net_dims();
    c.validate();
    return c;
  }
};

/// Named presets with the published hyperparameters.
inline ExperimentConfig preset(const std::string& name) {
  ExperimentConfig c;
  c.preset = name;
  if (name == "bimodal1d" || name == "custom") return c;
  if (name == "trivial1d") {
    c.target = "normal";
    c.target_mean = 0.0;
    c.target_var = 1.0;
    return c;
  }
  if (name == "circles-to-moons" || name == "circles-to-moons-dispersed") {
    c.dim = 2;
    c.steps = 256;
    c.batch_t = 64;
    c.batch_x = 256;
    c.hidden_layers = 3;
    c.param_target = 11362;
    c.initial = "two_circles";
    c.target = "double_crescent";
    c.eval_paths = 1000;
    c.oracle = false;
    if (name == "circles-to-moons") {
      c.sigma = 0.05;
      c.lambda_inv = 5e-6;
      c.iters = 10000;
      c.dataset_noise = 0.05;
    } else {
      c.sigma = 0.1;
      c.lambda_inv = 5e-3;
      c.iters = 5000;
      c.dataset_noise = 0.15;
    }
    return c;
  }
  throw ConfigError("unknown preset '" + name +
                    "' (bimodal1d | trivial1d | circles-to-moons | circles-to-moons-dispersed | custom)");
}

/// Parse config text. A `preset` line resets every key to that preset before
/// later lines apply, so it should come first.
inline ExperimentConfig parse_config(std::istream& is, ExperimentConfig base = preset("bimodal1d")) {
  std::string line;
  int lineno = 0;
  while (std::getline(is, line)) {
    ++lineno;
    if (const auto hash = line.find('#'); hash != std::string::npos) line.erase(hash);
    const auto trim = [](std::string s) {
      const auto b = s.find_first_not_of(" \t\r");
      if (b == std::string::npos) return std::string();
      return s.substr(b, s.find_last_not_of(" \t\r") - b + 1);
    };
    line = trim(line);
    if (line.empty()) continue;
    const auto eq = line.find('=');
    if (eq == std::string::npos) throw ConfigError("config line " + std::to_string(lineno) + ": expected key = value");
    const std::string key = trim(line.substr(0, eq));
    const std::string value = trim(line.substr(eq + 1));
    if (key == "preset") {
      base = preset(value);
    } else {
      base.set(key, value);
    }
  }
  return base;
}

inline ExperimentConfig parse_config_text(const std::string& text, ExperimentConfig base = preset("bimodal1d")) {
  std::istringstream is(text);
  return parse_config(is, std::move(base));
}

inline ExperimentConfig load_config(const std::string& path, ExperimentConfig base = preset("bimodal1d")) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read config file " + path);
  return parse_config(in, std::move(base));
}

}  // namespace sbmmd
