#include "pfpe/errors.hpp"
#include "pfpe/harness.hpp"

#include <fstream>
#include <set>
#include <sstream>

namespace pfpe::harness {

using nlohmann::json;

namespace {

void check_keys(const json& j, const char* section, std::initializer_list<const char*> allowed) {
  if (!j.is_object()) throw ConfigError(std::string(section) + " must be a JSON object");
  const std::set<std::string> ok(allowed.begin(), allowed.end());
  for (const auto& item : j.items()) {
    if (!ok.count(item.key())) throw ConfigError(std::string(section) + ": unknown key '" + item.key() + "'");
  }
}

std::optional<double> optional_number(const json& j, const char* key) {
  if (!j.contains(key) || j.at(key).is_null()) return std::nullopt;
  return j.at(key).get<double>();
}

json optional_to_json(const std::optional<double>& v) { return v ? json(*v) : json(nullptr); }

EnvironmentSpec environment_from_json(const json& j) {
  check_keys(j, "environment",
             {"kind", "name", "n_states", "n_actions", "seed", "r_max", "gamma", "mdp", "distributions"});
  EnvironmentSpec env;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "builtin") {
    env.kind = EnvironmentSpec::Kind::Builtin;
    env.builtin = j.at("name").get<std::string>();
    if (env.builtin != "baird" && env.builtin != "cycle2" && env.builtin != "selfloop") {
      throw ConfigError("environment: unknown builtin '" + env.builtin + "'");
    }
  } else if (kind == "random_ergodic") {
    env.kind = EnvironmentSpec::Kind::RandomErgodic;
    env.n_states = j.at("n_states").get<std::size_t>();
    env.n_actions = j.at("n_actions").get<std::size_t>();
    env.seed = j.value("seed", std::uint64_t{0});
    env.r_max = j.value("r_max", 1.0);
  } else if (kind == "inline") {
    env.kind = EnvironmentSpec::Kind::Inline;
    env.inline_mdp = j.at("mdp");
  } else {
    throw ConfigError("environment: unknown kind '" + kind + "'");
  }
  env.gamma = optional_number(j, "gamma");
  if (j.contains("distributions")) {
    check_keys(j.at("distributions"), "environment.distributions", {"pi", "mu", "d"});
    env.distributions = j.at("distributions");
  }
  return env;
}

json environment_to_json(const EnvironmentSpec& env) {
  json j;
  switch (env.kind) {
    case EnvironmentSpec::Kind::Builtin:
      j = {{"kind", "builtin"}, {"name", env.builtin}};
      break;
    case EnvironmentSpec::Kind::RandomErgodic:
      j = {{"kind", "random_ergodic"},
           {"n_states", env.n_states},
           {"n_actions", env.n_actions},
           {"seed", env.seed},
           {"r_max", env.r_max}};
      break;
    case EnvironmentSpec::Kind::Inline:
      j = {{"kind", "inline"}, {"mdp", env.inline_mdp}};
      break;
  }
  j["gamma"] = optional_to_json(env.gamma);
  j["distributions"] = env.distributions;
  return j;
}

ApproximatorSpec approximator_from_json(const json& j) {
  check_keys(j, "approximator", {"kind", "features", "hidden_width", "initial"});
  ApproximatorSpec a;
  const std::string kind = j.at("kind").get<std::string>();
  if (kind == "linear") {
    a.kind = ApproximatorSpec::Kind::Linear;
    a.features = j.value("features", json("builtin"));
    if (a.features.is_string()) {
      const auto name = a.features.get<std::string>();
      if (name != "builtin" && name != "one_hot") throw ConfigError("approximator: unknown features '" + name + "'");
    } else if (!a.features.is_array()) {
      throw ConfigError("approximator.features must be \"builtin\", \"one_hot\" or a table");
    }
  } else if (kind == "mlp") {
    a.kind = ApproximatorSpec::Kind::Mlp;
    a.hidden_width = j.value("hidden_width", std::size_t{8});
    if (a.hidden_width == 0) throw ConfigError("approximator.hidden_width must be positive");
  } else {
    throw ConfigError("approximator: unknown kind '" + kind + "'");
  }
  if (j.contains("initial") && !j.at("initial").is_null()) a.initial = j.at("initial").get<std::vector<double>>();
  return a;
}

json approximator_to_json(const ApproximatorSpec& a) {
  json j;
  if (a.kind == ApproximatorSpec::Kind::Linear) {
    j = {{"kind", "linear"}, {"features", a.features}};
  } else {
    j = {{"kind", "mlp"}, {"hidden_width", a.hidden_width}};
  }
  j["initial"] = a.initial ? json(*a.initial) : json(nullptr);
  return j;
}

RunConfig run_from_json(const json& j) {
  check_keys(j, "run",
             {"schedule", "k", "n_target_updates", "target_rule", "regularisation", "mode", "clip", "gamma",
              "divergence_threshold"});
  RunConfig rc;
  if (j.contains("schedule")) {
    const json& s = j.at("schedule");
    check_keys(s, "run.schedule", {"kind", "alpha", "alpha0", "power"});
    const std::string kind = s.at("kind").get<std::string>();
    try {
      if (kind == "constant") {
        rc.schedule = StepSizeSchedule::constant(s.at("alpha").get<double>());
      } else if (kind == "robbins_munro") {
        rc.schedule = StepSizeSchedule::robbins_munro(s.at("alpha0").get<double>(), s.at("power").get<double>());
      } else {
        throw ConfigError("run.schedule: unknown kind '" + kind + "'");
      }
    } catch (const std::invalid_argument& e) {
      throw ConfigError(std::string("run.schedule: ") + e.what());
    }
  }
  rc.k = j.value("k", std::uint64_t{1});
  rc.n_target_updates = j.value("n_target_updates", std::uint64_t{1});
  if (j.contains("target_rule")) {
    const json& t = j.at("target_rule");
    check_keys(t, "run.target_rule", {"kind", "momentum"});
    const std::string kind = t.at("kind").get<std::string>();
    if (kind == "periodic") {
      rc.target_rule = TargetUpdateRule::periodic_copy();
    } else if (kind == "momentum") {
      rc.target_rule = {TargetUpdateRule::Kind::Momentum, t.at("momentum").get<double>()};
    } else {
      throw ConfigError("run.target_rule: unknown kind '" + kind + "'");
    }
  }
  if (j.contains("regularisation")) {
    const json& r = j.at("regularisation");
    check_keys(r, "run.regularisation", {"enabled", "mix", "eta"});
    rc.regularisation.enabled = r.value("enabled", false);
    rc.regularisation.mix = r.value("mix", 1.0);
    rc.regularisation.eta = r.value("eta", 0.0);
  }
  const std::string mode = j.value("mode", std::string("sampled"));
  if (mode == "sampled") {
    rc.mode = UpdateMode::Sampled;
  } else if (mode == "exact") {
    rc.mode = UpdateMode::ExactExpectation;
  } else {
    throw ConfigError("run.mode must be \"sampled\" or \"exact\"");
  }
  rc.clip = optional_number(j, "clip").value_or(kNoClip);
  rc.gamma_override = optional_number(j, "gamma");
  rc.divergence_threshold = j.value("divergence_threshold", 1e8);
  try {
    rc.validate();
  } catch (const std::invalid_argument& e) {
    throw ConfigError(std::string("run: ") + e.what());
  }
  return rc;
}

json run_to_json(const RunConfig& rc) {
  json schedule = rc.schedule.kind == StepSizeSchedule::Kind::Constant
                      ? json{{"kind", "constant"}, {"alpha", rc.schedule.alpha0}}
                      : json{{"kind", "robbins_munro"}, {"alpha0", rc.schedule.alpha0}, {"power", rc.schedule.power}};
  json target = rc.target_rule.kind == TargetUpdateRule::Kind::PeriodicCopy
                    ? json{{"kind", "periodic"}}
                    : json{{"kind", "momentum"}, {"momentum", rc.target_rule.momentum}};
  return {{"schedule", schedule},
          {"k", rc.k},
          {"n_target_updates", rc.n_target_updates},
          {"target_rule", target},
          {"regularisation",
           {{"enabled", rc.regularisation.enabled}, {"mix", rc.regularisation.mix}, {"eta", rc.regularisation.eta}}},
          {"mode", rc.mode == UpdateMode::Sampled ? "sampled" : "exact"},
          {"clip", std::isinf(rc.clip) ? json(nullptr) : json(rc.clip)},
          {"gamma", optional_to_json(rc.gamma_override)},
          {"divergence_threshold", rc.divergence_threshold}};
}

AnalysisConfig analysis_from_json(const json& j) {
  check_keys(j, "analysis",
             {"alpha", "k", "center", "radius", "samples", "n_quad", "sigma_delta", "k_max", "synthetic"});
  AnalysisConfig a;
  a.alpha = j.value("alpha", a.alpha);
  a.k = j.value("k", a.k);
  if (j.contains("center") && !j.at("center").is_null()) a.center = j.at("center").get<std::vector<double>>();
  a.radius = j.value("radius", a.radius);
  a.samples = j.value("samples", a.samples);
  a.n_quad = j.value("n_quad", a.n_quad);
  a.sigma_delta = optional_number(j, "sigma_delta");
  a.k_max = j.value("k_max", a.k_max);
  if (j.contains("synthetic") && !j.at("synthetic").is_null()) {
    const json& s = j.at("synthetic");
    check_keys(s, "analysis.synthetic", {"j_fpe_norm", "j_td_norm", "lambda_h_star"});
    SyntheticNorms n;
    n.j_fpe_norm = s.at("j_fpe_norm").get<double>();
    n.j_td_norm = s.at("j_td_norm").get<double>();
    n.lambda_h_star = s.value("lambda_h_star", 1.0);
    a.synthetic = n;
  }
  if (!(a.alpha > 0.0)) throw ConfigError("analysis.alpha must be positive");
  if (a.k < 1 || a.k_max < 1) throw ConfigError("analysis.k and analysis.k_max must be at least 1");
  if (a.samples < 1) throw ConfigError("analysis.samples must be at least 1");
  if (a.n_quad < 2) throw ConfigError("analysis.n_quad must be at least 2");
  return a;
}

json analysis_to_json(const AnalysisConfig& a) {
  json j = {{"alpha", a.alpha},
            {"k", a.k},
            {"center", a.center ? json(*a.center) : json(nullptr)},
            {"radius", a.radius},
            {"samples", a.samples},
            {"n_quad", a.n_quad},
            {"sigma_delta", optional_to_json(a.sigma_delta)},
            {"k_max", a.k_max},
            {"synthetic", nullptr}};
  if (a.synthetic) {
    j["synthetic"] = {{"j_fpe_norm", a.synthetic->j_fpe_norm},
                      {"j_td_norm", a.synthetic->j_td_norm},
                      {"lambda_h_star", a.synthetic->lambda_h_star}};
  }
  return j;
}

}  // namespace

ExperimentConfig config_from_json(const json& j) {
  try {
    check_keys(j, "config", {"environment", "approximator", "run", "sweep", "seeds", "analysis"});
    ExperimentConfig c;
    c.environment = environment_from_json(j.at("environment"));
    c.approximator = approximator_from_json(j.value("approximator", json{{"kind", "linear"}}));
    c.run = run_from_json(j.value("run", json::object()));
    if (j.contains("sweep") && !j.at("sweep").is_null()) {
      const json& s = j.at("sweep");
      check_keys(s, "sweep", {"k", "alpha", "total_steps"});
      SweepSpec sweep;
      sweep.k = s.at("k").get<std::vector<std::uint64_t>>();
      sweep.alpha = s.at("alpha").get<std::vector<double>>();
      if (s.contains("total_steps") && !s.at("total_steps").is_null()) {
        sweep.total_steps = s.at("total_steps").get<std::uint64_t>();
        if (*sweep.total_steps < 1) throw ConfigError("sweep.total_steps must be at least 1");
      }
      if (sweep.k.empty() || sweep.alpha.empty()) throw ConfigError("sweep lists must be nonempty");
      for (auto k : sweep.k)
        if (k < 1) throw ConfigError("sweep.k entries must be at least 1");
      for (auto a : sweep.alpha)
        if (!(a > 0.0)) throw ConfigError("sweep.alpha entries must be positive");
      c.sweep = sweep;
    }
    if (j.contains("seeds")) c.seeds = j.at("seeds").get<std::vector<std::uint64_t>>();
    if (c.seeds.empty()) throw ConfigError("seeds must be nonempty");
    if (j.contains("analysis") && !j.at("analysis").is_null()) c.analysis = analysis_from_json(j.at("analysis"));
    return c;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

json config_to_json(const ExperimentConfig& c) {
  json j = {{"environment", environment_to_json(c.environment)},
            {"approximator", approximator_to_json(c.approximator)},
            {"run", run_to_json(c.run)},
            {"seeds", c.seeds},
            {"sweep", nullptr},
            {"analysis", nullptr}};
  if (c.sweep) {
    j["sweep"] = {{"k", c.sweep->k},
                  {"alpha", c.sweep->alpha},
                  {"total_steps", c.sweep->total_steps ? json(*c.sweep->total_steps) : json(nullptr)}};
  }
  if (c.analysis) j["analysis"] = analysis_to_json(*c.analysis);
  return j;
}

ExperimentConfig load_config(const std::string& path) {
  std::ifstream in(path);
  if (!in) throw IoError("cannot read config '" + path + "'");
  json j;
  try {
    j = json::parse(in);
  } catch (const json::parse_error& e) {
    throw ConfigError("config '" + path + "': " + e.what());
  }
  return config_from_json(j);
}

namespace {

Policy policy_from(const json& spec, std::size_t n_s, std::size_t n_a, Rng& rng, const char* what) {
  try {
    if (spec.is_string()) {
      const auto name = spec.get<std::string>();
      if (name == "uniform") return Policy::uniform(n_s, n_a);
      if (name == "random") return random_full_support_policy(rng, n_s, n_a);
      throw ConfigError(std::string(what) + ": unknown policy '" + name + "'");
    }
    const auto rows = spec.get<std::vector<std::vector<double>>>();
    Matrix m(static_cast<Eigen::Index>(rows.size()), static_cast<Eigen::Index>(n_a));
    if (rows.size() != n_s) throw ConfigError(std::string(what) + ": wrong number of rows");
    for (std::size_t s = 0; s < n_s; ++s) {
      if (rows[s].size() != n_a) throw ConfigError(std::string(what) + ": wrong number of actions");
      for (std::size_t a = 0; a < n_a; ++a) m(static_cast<Eigen::Index>(s), static_cast<Eigen::Index>(a)) = rows[s][a];
    }
    return Policy(std::move(m));
  } catch (const InvalidModel& e) {
    throw ConfigError(std::string(what) + ": " + e.what());
  }
}

}  // namespace

BuiltProblem build_problem(const ExperimentConfig& config) {
  const EnvironmentSpec& env = config.environment;
  const ApproximatorSpec& spec = config.approximator;
  try {
    std::optional<FiniteMdp> mdp;
    std::optional<FeatureMap> builtin_features;
    std::optional<Policy> pi;
    std::optional<Policy> mu;
    std::optional<StateDistribution> d;
    std::optional<Vector> builtin_initial;
    Rng rng(env.seed);

    switch (env.kind) {
      case EnvironmentSpec::Kind::Builtin:
        if (env.builtin == "baird") {
          BairdSetup b = build_baird(env.gamma.value_or(0.99));
          mdp = b.mdp;
          builtin_features = b.features;
          pi = b.pi;
          mu = b.mu;
          d = b.d;
          builtin_initial = b.initial_params;
        } else if (env.builtin == "cycle2") {
          mdp = make_cycle2(env.gamma.value_or(0.9));
        } else {
          mdp = make_self_loop(1.0, env.gamma.value_or(0.9));
          builtin_features = FeatureMap(1, 1, Matrix::Ones(1, 1));
        }
        break;
      case EnvironmentSpec::Kind::RandomErgodic:
        mdp = random_ergodic_mdp(rng, env.n_states, env.n_actions, env.r_max, env.gamma.value_or(0.9));
        pi = random_full_support_policy(rng, env.n_states, env.n_actions);
        break;
      case EnvironmentSpec::Kind::Inline:
        mdp = mdp_from_json(env.inline_mdp);
        if (env.gamma) mdp = mdp->with_gamma(*env.gamma);
        break;
    }
    if (config.run.gamma_override) mdp = mdp->with_gamma(*config.run.gamma_override);
    const std::size_t n_s = mdp->n_states();
    const std::size_t n_a = mdp->n_actions();

    const json& dist = env.distributions;
    if (dist.contains("pi")) pi = policy_from(dist.at("pi"), n_s, n_a, rng, "distributions.pi");
    if (!pi) pi = Policy::uniform(n_s, n_a);
    if (dist.contains("mu")) {
      const json& m = dist.at("mu");
      mu = (m.is_string() && m.get<std::string>() == "same") ? *pi : policy_from(m, n_s, n_a, rng, "distributions.mu");
    }
    if (!mu) mu = *pi;
    if (dist.contains("d")) {
      const json& dj = dist.at("d");
      if (dj.is_string()) {
        const auto name = dj.get<std::string>();
        if (name == "uniform") {
          d = StateDistribution::uniform(n_s);
        } else if (name == "stationary") {
          d = stationary_distribution(*mdp, *mu);
        } else {
          throw ConfigError("distributions.d: unknown value '" + name + "'");
        }
      } else {
        const auto v = dj.get<std::vector<double>>();
        d = StateDistribution(Eigen::Map<const Vector>(v.data(), static_cast<Eigen::Index>(v.size())));
      }
    }
    if (!d) d = stationary_distribution(*mdp, *mu);

    std::shared_ptr<const Approximator> approx;
    std::optional<GramMatrices> gram;
    if (spec.kind == ApproximatorSpec::Kind::Linear) {
      std::optional<FeatureMap> features;
      if (spec.features.is_string() && spec.features.get<std::string>() == "builtin" && builtin_features) {
        features = builtin_features;
      } else if (spec.features.is_string()) {
        features = FeatureMap::one_hot(n_s, n_a);
      } else {
        features = feature_map_from_json(spec.features, n_s, n_a);
      }
      gram = gram_matrices(*mdp, *features, *d, *mu, *pi);
      approx = std::make_shared<LinearApproximator>(*features);
    } else {
      approx = std::make_shared<MlpApproximator>(MlpSpec{n_s, n_a, spec.hidden_width});
      builtin_initial.reset();
    }

    BuiltProblem built{Problem(*mdp, approx, *d, *mu, *pi), std::nullopt, std::nullopt};
    if (spec.initial) {
      if (spec.initial->size() != approx->param_dim()) {
        throw ConfigError("approximator.initial has " + std::to_string(spec.initial->size()) + " entries, expected " +
                          std::to_string(approx->param_dim()));
      }
      built.initial_params = Eigen::Map<const Vector>(spec.initial->data(), static_cast<Eigen::Index>(spec.initial->size()));
    } else if (builtin_initial && spec.features.is_string() && spec.features.get<std::string>() == "builtin") {
      built.initial_params = builtin_initial;
    }
    if (gram) built.fixed_point = td_fixed_point_linear(*gram, mdp->gamma(), true);
    return built;
  } catch (const InvalidModel& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  } catch (const DimensionMismatch& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  } catch (const NonErgodic& e) {
    throw ConfigError(std::string("environment: ") + e.what());
  } catch (const json::exception& e) {
    throw ConfigError(std::string("config: ") + e.what());
  }
}

}  // namespace pfpe::harness
