#include "gdc/experiment.hpp"

#include <chrono>
#include <cmath>
#include <cstdlib>
#include <fstream>
#include <iostream>
#include <limits>
#include <memory>
#include <set>
#include <sstream>

#include "gdc/estimators.hpp"
#include "gdc/metrics.hpp"
#include "json.hpp"

namespace gdc {

namespace fs = std::filesystem;
using nlohmann::json;

namespace {

[[noreturn]] void config_error(const std::string& path, const std::string& what) {
  throw Error(ErrorKind::ConfigError, path + ": " + what);
}

std::string join(const std::string& path, const std::string& key) { return path.empty() ? key : path + "." + key; }

// Typed access to one JSON object; unknown keys are rejected by finish().
class Section {
 public:
  Section(const json& obj, std::string path) : obj_(obj), path_(std::move(path)) {
    if (!obj_.is_object()) config_error(path_.empty() ? "<root>" : path_, "expected an object");
  }

  bool has(const std::string& key) {
    seen_.insert(key);
    return obj_.contains(key) && !obj_.at(key).is_null();
  }

  const json& raw(const std::string& key) {
    seen_.insert(key);
    return obj_.at(key);
  }

  std::string where(const std::string& key) const { return join(path_, key); }

  template <typename T>
  T get(const std::string& key) {
    if (!has(key)) config_error(where(key), "required field is missing");
    return convert<T>(key);
  }

  template <typename T>
  T get(const std::string& key, T fallback) {
    if (!has(key)) return fallback;
    return convert<T>(key);
  }

  void finish() const {
    for (const auto& [key, value] : obj_.items()) {
      if (!seen_.count(key)) config_error(where(key), "unknown field");
    }
  }

 private:
  template <typename T>
  T convert(const std::string& key) {
    const json& v = obj_.at(key);
    if constexpr (std::is_same_v<T, bool>) {
      if (!v.is_boolean()) config_error(where(key), "expected a boolean");
      return v.get<bool>();
    } else if constexpr (std::is_same_v<T, std::string>) {
      if (!v.is_string()) config_error(where(key), "expected a string");
      return v.get<std::string>();
    } else if constexpr (std::is_integral_v<T>) {
      if (!v.is_number_integer()) config_error(where(key), "expected an integer");
      if (std::is_unsigned_v<T> && v.get<long long>() < 0) config_error(where(key), "must be non-negative");
      return v.get<T>();
    } else if constexpr (std::is_floating_point_v<T>) {
      if (!v.is_number()) config_error(where(key), "expected a number");
      return v.get<T>();
    } else {
      if (!v.is_array()) config_error(where(key), "expected an array");
      T out;
      for (std::size_t i = 0; i < v.size(); ++i) {
        using E = typename T::value_type;
        const json& e = v[i];
        const std::string at = where(key) + "[" + std::to_string(i) + "]";
        if constexpr (std::is_same_v<E, std::string>) {
          if (!e.is_string()) config_error(at, "expected a string");
        } else if constexpr (std::is_integral_v<E>) {
          if (!e.is_number_integer() || (std::is_unsigned_v<E> && e.get<long long>() < 0)) {
            config_error(at, "expected a non-negative integer");
          }
        } else {
          if (!e.is_number()) config_error(at, "expected a number");
        }
        out.push_back(e.get<E>());
      }
      return out;
    }
  }

  const json& obj_;
  std::string path_;
  std::set<std::string> seen_;
};

fs::path resolve_path(const std::string& p, const fs::path& base_dir) {
  fs::path path(p);
  return path.is_relative() && !base_dir.empty() ? base_dir / path : path;
}

ConstraintConfig parse_constraint(const json& obj, const std::string& path) {
  Section s(obj, path);
  ConstraintConfig c;
  c.id = s.get<std::string>("id");
  c.kind = s.get<std::string>("kind");
  c.target = s.get<double>("target");
  c.pointwise = s.get<bool>("pointwise", false);
  if (c.kind == "token_presence") {
    c.tokens = {s.get<std::string>("token")};
  } else if (c.kind == "wordlist_presence" || c.kind == "prefix_match") {
    c.tokens = s.get<std::vector<std::string>>("tokens");
    if (c.tokens.empty()) config_error(s.where("tokens"), "must not be empty");
  } else if (c.kind == "token_ratio") {
    c.numerator = s.get<std::vector<std::string>>("numerator");
    c.denominator = s.get<std::vector<std::string>>("denominator");
    c.empty_value = s.get<double>("empty_value", 0.0);
    c.range = FeatureRange::Unit;
  } else if (c.kind == "predicate_table") {
    const json& table = s.raw("table");
    if (!table.is_object()) config_error(s.where("table"), "expected an object mapping sequences to values");
    for (const auto& [key, value] : table.items()) {
      if (!value.is_number()) config_error(s.where("table") + "." + key, "expected a number");
      c.table.emplace_back(key, value.get<double>());
    }
    c.fallback = s.get<double>("fallback", 0.0);
    const auto range = s.get<std::string>("range", "binary");
    if (range == "binary") {
      c.range = FeatureRange::Binary;
    } else if (range == "unit") {
      c.range = FeatureRange::Unit;
    } else {
      config_error(s.where("range"), "expected \"binary\" or \"unit\"");
    }
  } else {
    config_error(s.where("kind"), "unknown feature kind '" + c.kind + "'");
  }
  s.finish();
  return c;
}

std::string base_name(const fs::path& p) {
  const auto stem = p.stem().string();
  return stem.empty() ? "experiment" : stem;
}

TokenId resolve_token(const Vocabulary& vocab, const std::string& token, const std::string& path) {
  const TokenId id = vocab.find(token);
  if (id < 0 || id == vocab.eos()) config_error(path, "unknown token '" + token + "'");
  return id;
}

std::vector<TokenId> resolve_tokens(const Vocabulary& vocab, const std::vector<std::string>& tokens,
                                    const std::string& path) {
  std::vector<TokenId> out;
  for (std::size_t i = 0; i < tokens.size(); ++i) {
    out.push_back(resolve_token(vocab, tokens[i], path + "[" + std::to_string(i) + "]"));
  }
  return out;
}

Feature resolve_feature(const ConstraintConfig& c, const Vocabulary& vocab, std::size_t lmax, const std::string& path) {
  if (c.kind == "token_presence") return Feature::token_presence(c.id, resolve_token(vocab, c.tokens[0], path + ".token"));
  if (c.kind == "wordlist_presence") return Feature::wordlist_presence(c.id, resolve_tokens(vocab, c.tokens, path + ".tokens"));
  if (c.kind == "prefix_match") return Feature::prefix_match(c.id, resolve_tokens(vocab, c.tokens, path + ".tokens"));
  if (c.kind == "token_ratio") {
    return Feature::token_ratio(c.id, resolve_tokens(vocab, c.numerator, path + ".numerator"),
                                resolve_tokens(vocab, c.denominator, path + ".denominator"), c.empty_value);
  }
  std::map<Sequence, double> table;
  for (const auto& [text, value] : c.table) {
    std::istringstream in(text);
    Sequence x;
    std::string tok;
    while (in >> tok) x.tokens.push_back(resolve_token(vocab, tok, path + ".table"));
    if (x.length() > lmax) config_error(path + ".table", "sequence '" + text + "' is longer than lmax");
    table[x] = value;
  }
  return Feature::predicate_table(c.id, std::move(table), c.range, c.fallback);
}

std::string read_file(const fs::path& path, const std::string& field) {
  std::ifstream in(path, std::ios::binary);
  if (!in) config_error(field, "cannot read '" + path.string() + "'");
  std::ostringstream ss;
  ss << in.rdbuf();
  return ss.str();
}

void write_file(const fs::path& path, const std::string& content) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw Error(ErrorKind::ConfigError, "cannot write '" + path.string() + "'");
  out << content;
  if (!out) throw Error(ErrorKind::ConfigError, "failed writing '" + path.string() + "'");
}

json number_or_null(double v) { return std::isfinite(v) ? json(v) : json(nullptr); }

FitResult fit_ebm(const ExperimentConfig& config, const Problem& problem) {
  const auto& cs = problem.constraints;
  const auto& fit = config.fit;
  auto exact_report = [&](const Ebm& ebm, FitReport report) {
    if (problem.base->space().enumerable()) {
      report.achieved_moments =
          exact_moments(exact_normalize(ebm).probs, feature_table(problem.base->space(), cs));
      report.objective = 0.0;
      for (std::size_t j = 0; j < cs.size(); ++j) {
        const double d = cs[j].target - report.achieved_moments[j];
        report.objective += d * d;
      }
      report.converged = report.objective < fit.config.tolerance;
    }
    return FitResult{std::move(report), ebm};
  };
  FitReport report;
  report.ids = cs.ids();
  report.targets = cs.targets();
  if (fit.lambda) {
    if (fit.lambda->size() != cs.size()) {
      config_error("fit.lambda", "expected " + std::to_string(cs.size()) + " values");
    }
    auto ebm = Ebm::exponential(problem.base, cs, *fit.lambda, fit.config.lambda_clamp);
    report.lambda.assign(ebm.lambda().begin(), ebm.lambda().end());
    report.converged = true;
    return exact_report(ebm, report);
  }
  if (cs.empty()) {
    auto ebm = Ebm::exponential(problem.base, cs, {});
    report.converged = true;
    return FitResult{report, ebm};
  }
  if (fit.method == FitMethod::Exact && !cs.all_pointwise()) {
    const auto lambda = exact_fit_lambda(*problem.base, cs, fit.config.lambda_clamp);
    auto ebm = Ebm::exponential(problem.base, cs, lambda, fit.config.lambda_clamp);
    report.lambda = lambda;
    return exact_report(ebm, report);
  }
  return build_ebm(problem.base, cs, fit.config);
}

json fit_report_json(const FitResult& fit, const ConstraintSet& cs) {
  json doc;
  doc["mode"] = std::string(to_string(fit.report.mode));
  json constraints = json::array();
  for (std::size_t j = 0; j < cs.size(); ++j) {
    json c;
    c["id"] = cs[j].feature.id();
    c["kind"] = std::string(to_string(cs[j].feature.kind()));
    c["target"] = cs[j].target;
    c["pointwise"] = cs[j].pointwise;
    c["lambda"] = j < fit.report.lambda.size() ? number_or_null(fit.report.lambda[j]) : json(nullptr);
    c["achieved_moment"] =
        j < fit.report.achieved_moments.size() ? number_or_null(fit.report.achieved_moments[j]) : json(nullptr);
    constraints.push_back(c);
  }
  doc["constraints"] = constraints;
  doc["objective"] = number_or_null(fit.report.objective);
  doc["steps_used"] = fit.report.steps_used;
  doc["converged"] = fit.report.converged;
  if (fit.report.mode == EbmMode::PointwiseProduct) {
    doc["note"] = "pointwise-product mode: P(x) = a(x) b(x), no lambda";
  }
  return doc;
}

class Run {
 public:
  Run(std::string subcommand, const ExperimentConfig& config, fs::path out)
      : config_(config), out_(std::move(out)), start_(std::chrono::steady_clock::now()) {
    manifest_.subcommand = std::move(subcommand);
    std::error_code ec;
    fs::create_directories(out_, ec);
    if (ec) throw Error(ErrorKind::ConfigError, "output: cannot create '" + out_.string() + "'");
  }

  void write(const std::string& name, const std::string& content) {
    const auto path = out_ / name;
    write_file(path, content);
    manifest_.artifacts[name] = fs::absolute(path);
  }

  RunManifest finish() {
    manifest_.wall_clock_seconds =
        std::chrono::duration<double>(std::chrono::steady_clock::now() - start_).count();
    json doc;
    doc["version"] = std::string(kVersion);
    doc["subcommand"] = manifest_.subcommand;
    doc["seed"] = config_.seed;
    doc["output_dir"] = fs::absolute(out_).string();
    json echo = json::parse(config_.document, nullptr, false);
    if (echo.is_object()) echo["seed"] = config_.seed;
    doc["config"] = echo;
    json artifacts = json::object();
    for (const auto& [name, path] : manifest_.artifacts) artifacts[name] = path.string();
    artifacts["manifest.json"] = fs::absolute(out_ / "manifest.json").string();
    doc["artifacts"] = artifacts;
    doc["wall_clock_seconds"] = manifest_.wall_clock_seconds;
    write_file(out_ / "manifest.json", doc.dump(2) + "\n");
    manifest_.artifacts["manifest.json"] = fs::absolute(out_ / "manifest.json");
    return manifest_;
  }

 private:
  const ExperimentConfig& config_;
  fs::path out_;
  std::chrono::steady_clock::time_point start_;
  RunManifest manifest_;
};

std::unique_ptr<ExactReference> exact_reference(const ExperimentConfig& config, const Ebm& ebm) {
  if (!config.eval.exact_oracle) return nullptr;
  if (!ebm.space().enumerable()) {
    throw Error(ErrorKind::UniverseTooLarge, "eval.exact_oracle: universe of " +
                                                 std::to_string(ebm.space().universe_size()) +
                                                 " sequences exceeds the enumeration guard");
  }
  return std::make_unique<ExactReference>(ExactReference::build(ebm));
}

std::string render_samples(const SequenceSpace& space, std::span<const Sequence> samples) {
  std::string out;
  for (const auto& x : samples) {
    out += space.render(x);
    out += '\n';
  }
  return out;
}

std::string zipf_csv(std::span<const Sequence> samples, const Vocabulary& vocab) {
  std::ostringstream out;
  ZipfTable table;
  try {
    table = zipf_table(samples, vocab);
  } catch (const Error& e) {
    if (e.kind() != ErrorKind::EmptyCorpus) throw;
  }
  write_zipf_csv(out, table);
  return out.str();
}

void write_policy_outputs(Run& run, const ExperimentConfig& config, const TabularARModel& policy) {
  run.write("policy.json", serialize_model(policy) + "\n");
  Rng rng(config.seed ^ 0x5a4d91e5ULL);
  const auto samples = policy.sample(rng, config.eval.sample_size);
  run.write("samples.txt", render_samples(policy.space(), samples));
  run.write("zipf.csv", zipf_csv(samples, policy.vocabulary()));
}

DpgConfig dpg_config(const ExperimentConfig& config) {
  DpgConfig d = config.trainer.dpg;
  d.seed = config.seed;
  d.eval_every = config.eval.eval_every;
  d.eval_samples = config.eval.sample_size;
  return d;
}

}  // namespace

ExperimentConfig parse_config(std::string_view text, const fs::path& base_dir) {
  json doc;
  try {
    doc = json::parse(text);
  } catch (const json::parse_error& e) {
    throw Error(ErrorKind::ConfigError, std::string("<root>: invalid JSON: ") + e.what());
  }
  ExperimentConfig config;
  config.document = doc.dump();
  Section root(doc, "");
  config.seed = root.get<std::uint64_t>("seed", 0);
  config.name = root.get<std::string>("name", config.name);

  {
    Section space(root.raw("space"), "space");
    config.lmax = space.get<std::size_t>("lmax");
    if (config.lmax == 0) config_error("space.lmax", "must be >= 1");
    space.finish();
  }

  {
    if (!root.has("base_model")) config_error("base_model", "required field is missing");
    Section bm(root.raw("base_model"), "base_model");
    auto& b = config.base_model;
    if (bm.has("corpus")) b.corpus = resolve_path(bm.get<std::string>("corpus"), base_dir);
    if (bm.has("model")) b.model = resolve_path(bm.get<std::string>("model"), base_dir);
    if (b.corpus.has_value() == b.model.has_value()) {
      config_error("base_model", "exactly one of corpus and model must be given");
    }
    b.order = bm.get<int>("order", b.order);
    b.smoothing = bm.get<double>("smoothing", b.smoothing);
    b.vocabulary = bm.get<std::vector<std::string>>("vocabulary", {});
    if (b.order < 1) config_error("base_model.order", "must be >= 1");
    if (!(b.smoothing >= 0.0)) config_error("base_model.smoothing", "must be >= 0");
    if (b.model && (bm.has("order") || bm.has("smoothing") || bm.has("vocabulary"))) {
      config_error("base_model", "order, smoothing and vocabulary only apply to a corpus");
    }
    bm.finish();
  }

  if (root.has("constraints")) {
    const json& list = root.raw("constraints");
    if (!list.is_array()) config_error("constraints", "expected an array");
    for (std::size_t i = 0; i < list.size(); ++i) {
      config.constraints.push_back(parse_constraint(list[i], "constraints[" + std::to_string(i) + "]"));
    }
  }

  if (root.has("fit")) {
    Section fit(root.raw("fit"), "fit");
    auto& f = config.fit;
    const auto method = fit.get<std::string>("method", "snis");
    if (method == "snis") {
      f.method = FitMethod::Snis;
    } else if (method == "exact") {
      f.method = FitMethod::Exact;
    } else {
      config_error("fit.method", "expected \"snis\" or \"exact\"");
    }
    f.config.sample_count = fit.get<std::size_t>("sample_count", f.config.sample_count);
    f.config.sgd.learning_rate = fit.get<double>("learning_rate", f.config.sgd.learning_rate);
    f.config.sgd.steps = fit.get<std::size_t>("steps", f.config.sgd.steps);
    f.config.sgd.batch_size = fit.get<std::size_t>("batch_size", f.config.sgd.batch_size);
    f.config.tolerance = fit.get<double>("tolerance", f.config.tolerance);
    f.config.lambda_clamp = fit.get<double>("lambda_clamp", f.config.lambda_clamp);
    if (fit.has("lambda")) f.lambda = fit.get<std::vector<double>>("lambda");
    if (f.config.sample_count == 0) config_error("fit.sample_count", "must be >= 1");
    if (!(f.config.sgd.learning_rate > 0.0)) config_error("fit.learning_rate", "must be positive");
    if (!(f.config.tolerance > 0.0)) config_error("fit.tolerance", "must be positive");
    if (!(f.config.lambda_clamp > 0.0)) config_error("fit.lambda_clamp", "must be positive");
    fit.finish();
  }

  if (root.has("trainer")) {
    Section tr(root.raw("trainer"), "trainer");
    auto& t = config.trainer;
    t.method = tr.get<std::string>("method", t.method);
    const bool gdc = t.method == "gdc";
    if (!gdc) {
      try {
        t.baseline.kind = parse_baseline(t.method);
      } catch (const Error&) {
        config_error("trainer.method", "unknown method '" + t.method + "'");
      }
    }
    const bool penalized = !gdc && t.baseline.kind == BaselineKind::KlPenalized;
    const bool rejection = !gdc && t.baseline.kind == BaselineKind::RejectionMle;
    const std::size_t iterations = tr.get<std::size_t>("iterations", 100);
    const std::size_t k = tr.get<std::size_t>("K", 1024);
    const double lr = tr.get<double>("learning_rate", 0.1);
    const int policy_order = tr.get<int>("policy_order", 0);
    if (k == 0) config_error("trainer.K", "must be >= 1");
    if (!(lr > 0.0)) config_error("trainer.learning_rate", "must be positive");
    if (policy_order < 0) config_error("trainer.policy_order", "must be >= 0");
    auto only = [&](const char* key, bool allowed, const char* who) {
      if (tr.has(key) && !allowed) config_error(tr.where(key), std::string("only valid for ") + who);
    };
    only("adaptivity", gdc, "gdc");
    only("batch_update", gdc, "gdc");
    only("beta", penalized, "kl-penalized");
    only("beta_adaptive", penalized, "kl-penalized");
    only("kl_target", penalized, "kl-penalized");
    only("beta_rate", penalized, "kl-penalized");
    only("sample_budget", rejection, "rejection-mle");
    only("mle_order", rejection, "rejection-mle");
    only("mle_smoothing", rejection, "rejection-mle");
    if (gdc) {
      t.dpg.iterations = iterations;
      t.dpg.steps_per_iteration = k;
      t.dpg.learning_rate = lr;
      t.dpg.policy_order = policy_order;
      if (tr.has("adaptivity")) {
        try {
          t.dpg.adaptivity = parse_adaptivity(tr.get<std::string>("adaptivity"));
        } catch (const Error&) {
          config_error("trainer.adaptivity", "expected \"kl\", \"tvd\" or \"none\"");
        }
      }
      t.dpg.batch_update = tr.get<bool>("batch_update", t.dpg.batch_update);
    } else {
      auto& b = t.baseline;
      b.iterations = iterations;
      b.steps_per_iteration = k;
      b.learning_rate = lr;
      b.policy_order = policy_order;
      if (penalized) {
        if (!tr.has("beta")) config_error("trainer.beta", "required for kl-penalized");
        b.beta = tr.get<double>("beta");
        if (!(b.beta >= 0.0)) config_error("trainer.beta", "must be >= 0");
        b.beta_adaptive = tr.get<bool>("beta_adaptive", false);
        b.kl_target = tr.get<double>("kl_target", 0.0);
        b.beta_rate = tr.get<double>("beta_rate", b.beta_rate);
        if (b.beta_adaptive && !(b.kl_target > 0.0)) config_error("trainer.kl_target", "must be positive with beta_adaptive");
      }
      if (rejection) {
        b.sample_budget = tr.get<std::size_t>("sample_budget");
        if (b.sample_budget == 0) config_error("trainer.sample_budget", "must be >= 1");
        b.mle_order = tr.get<int>("mle_order", 0);
        b.mle_smoothing = tr.get<double>("mle_smoothing", 0.0);
        if (b.mle_order < 0) config_error("trainer.mle_order", "must be >= 0");
        if (!(b.mle_smoothing >= 0.0)) config_error("trainer.mle_smoothing", "must be >= 0");
      }
    }
    tr.finish();
  }

  if (root.has("eval")) {
    Section ev(root.raw("eval"), "eval");
    auto& e = config.eval;
    e.eval_every = ev.get<std::size_t>("eval_every", e.eval_every);
    e.sample_size = ev.get<std::size_t>("sample_size", e.sample_size);
    e.exact_oracle = ev.get<bool>("exact_oracle", e.exact_oracle);
    if (ev.has("model")) e.model = resolve_path(ev.get<std::string>("model"), base_dir);
    if (e.eval_every == 0) config_error("eval.eval_every", "must be >= 1");
    if (e.sample_size < 2) config_error("eval.sample_size", "must be >= 2");
    ev.finish();
  }

  if (root.has("ablation")) {
    Section ab(root.raw("ablation"), "ablation");
    auto& a = config.ablation;
    if (ab.has("variants")) {
      const auto names = ab.get<std::vector<std::string>>("variants");
      a.variants.clear();
      for (std::size_t i = 0; i < names.size(); ++i) {
        try {
          a.variants.push_back(parse_adaptivity(names[i]));
        } catch (const Error&) {
          config_error("ablation.variants[" + std::to_string(i) + "]", "expected \"kl\", \"tvd\" or \"none\"");
        }
      }
      if (a.variants.empty()) config_error("ablation.variants", "must not be empty");
    }
    a.seeds = ab.get<std::vector<std::uint64_t>>("seeds", a.seeds);
    if (a.seeds.empty()) config_error("ablation.seeds", "must not be empty");
    a.kl_threshold = ab.get<double>("kl_threshold", a.kl_threshold);
    if (!(a.kl_threshold > 0.0)) config_error("ablation.kl_threshold", "must be positive");
    ab.finish();
  }

  if (root.has("output")) config.output = fs::path(root.get<std::string>("output"));
  root.finish();
  return config;
}

ExperimentConfig load_config(const fs::path& path) {
  auto config = parse_config(read_file(path, "--config"), path.parent_path());
  if (!json::parse(config.document).contains("name")) config.name = base_name(path);
  return config;
}

fs::path resolve_output(const ExperimentConfig& config, const std::optional<fs::path>& flag) {
  if (flag) return *flag;
  const char* root = std::getenv(kOutputRootEnv);
  const bool has_root = root != nullptr && *root != '\0';
  if (config.output) {
    if (config.output->is_relative() && has_root) return fs::path(root) / *config.output;
    return *config.output;
  }
  return (has_root ? fs::path(root) : fs::path("runs")) / config.name;
}

Problem build_problem(const ExperimentConfig& config) {
  const auto& b = config.base_model;
  Problem problem;
  if (b.corpus) {
    const auto text = read_file(*b.corpus, "base_model.corpus");
    TokenizedCorpus corpus;
    if (b.vocabulary.empty()) {
      corpus = tokenize_corpus(text, config.lmax);
    } else {
      try {
        corpus = tokenize_corpus(text, Vocabulary::with_eos(b.vocabulary), config.lmax);
      } catch (const Error& e) {
        config_error("base_model.vocabulary", e.what());
      }
    }
    if (corpus.truncated_lines > 0) {
      std::cerr << "warning: truncated " << corpus.truncated_lines << " corpus lines to lmax " << config.lmax << "\n";
    }
    const SequenceSpace space(corpus.vocabulary, config.lmax);
    problem.base = std::make_shared<const TabularARModel>(mle_fit(corpus.sequences, space, b.order, b.smoothing));
  } else {
    auto model = deserialize_model(read_file(*b.model, "base_model.model"));
    if (model.space().lmax() != config.lmax) {
      config_error("space.lmax", "model file has lmax " + std::to_string(model.space().lmax()));
    }
    problem.base = std::make_shared<const TabularARModel>(std::move(model));
  }
  const auto& vocab = problem.base->vocabulary();
  std::vector<ConstraintSpec> specs;
  for (std::size_t i = 0; i < config.constraints.size(); ++i) {
    const auto path = "constraints[" + std::to_string(i) + "]";
    const auto& c = config.constraints[i];
    try {
      specs.push_back(ConstraintSpec::make(resolve_feature(c, vocab, config.lmax, path), c.target, c.pointwise));
    } catch (const Error& e) {
      if (e.kind() != ErrorKind::ConfigError && e.kind() != ErrorKind::InvalidArgument) throw;
      const std::string what = e.what();
      throw Error(ErrorKind::ConfigError, what.find(path) == std::string::npos ? path + ": " + what : what);
    }
  }
  try {
    problem.constraints = ConstraintSet(std::move(specs));
  } catch (const Error& e) {
    config_error("constraints", e.what());
  }
  return problem;
}

RunManifest run_fit(const ExperimentConfig& config, const fs::path& out) {
  Run run("fit", config, out);
  auto problem = build_problem(config);
  auto cfg = config;
  cfg.fit.config.sgd.seed = config.seed;
  const auto fit = fit_ebm(cfg, problem);
  run.write("fit_report.json", fit_report_json(fit, problem.constraints).dump(2) + "\n");
  run.write("base_model.json", serialize_model(*problem.base) + "\n");
  if (!fit.report.converged) std::cerr << "warning: lambda fit did not reach the tolerance\n";
  return run.finish();
}

RunManifest run_train(const ExperimentConfig& config, const fs::path& out) {
  Run run("train", config, out);
  auto problem = build_problem(config);
  auto cfg = config;
  cfg.fit.config.sgd.seed = config.seed;
  const auto fit = fit_ebm(cfg, problem);
  run.write("fit_report.json", fit_report_json(fit, problem.constraints).dump(2) + "\n");
  const auto exact = exact_reference(config, fit.ebm);

  std::vector<MetricsRecord> history;
  TabularARModel policy;
  const std::string method = config.trainer.method;
  if (method == "gdc") {
    auto state = train(*problem.base, fit.ebm, dpg_config(config), exact.get());
    history = std::move(state.history);
    policy = std::move(state.policy);
  } else {
    BaselineConfig b = config.trainer.baseline;
    b.seed = config.seed;
    b.eval_every = config.eval.eval_every;
    b.eval_samples = config.eval.sample_size;
    auto result = train_baseline(*problem.base, fit.ebm, b, exact.get());
    history = std::move(result.history);
    policy = std::move(result.policy);
  }

  const MetricsCsv csv(problem.constraints.ids(), exact != nullptr);
  std::ostringstream metrics;
  csv.write_header(metrics);
  for (const auto& record : history) csv.write_row(metrics, method, record);
  run.write("metrics.csv", metrics.str());
  write_policy_outputs(run, config, policy);
  return run.finish();
}

RunManifest run_ablation(const ExperimentConfig& config, const fs::path& out) {
  if (config.trainer.method != "gdc") config_error("trainer.method", "ablation runs need the gdc trainer");
  Run run("ablation", config, out);
  auto problem = build_problem(config);
  auto cfg = config;
  cfg.fit.config.sgd.seed = config.seed;
  const auto fit = fit_ebm(cfg, problem);
  run.write("fit_report.json", fit_report_json(fit, problem.constraints).dump(2) + "\n");
  const auto exact = exact_reference(config, fit.ebm);
  const double threshold = config.ablation.kl_threshold;

  const MetricsCsv csv(problem.constraints.ids(), exact != nullptr, {"variant", "seed"});
  std::ostringstream metrics;
  csv.write_header(metrics);
  std::ostringstream summary;
  summary << "variant,seed,kl_threshold,samples_to_threshold,final_kl_p_pi\n";
  for (const auto variant : config.ablation.variants) {
    for (const auto seed : config.ablation.seeds) {
      DpgConfig d = dpg_config(config);
      d.adaptivity = variant;
      d.seed = seed;
      std::optional<std::size_t> reached;
      double last_kl = std::numeric_limits<double>::quiet_NaN();
      IterationObserver observer;
      if (exact) {
        observer = [&](const TrainState& s) {
          last_kl = exact_kl(exact->target, exact_distribution(s.policy));
          if (!reached && last_kl < threshold) reached = s.samples_drawn;
        };
      }
      auto state = train(*problem.base, fit.ebm, d, exact.get(), observer);
      const std::vector<std::string> prefix{std::string(to_string(variant)), std::to_string(seed)};
      for (const auto& record : state.history) {
        csv.write_row(metrics, "gdc", record, prefix);
        if (!exact) {
          last_kl = record.kl_p_pi.value;
          if (!reached && last_kl < threshold) reached = record.step * d.steps_per_iteration;
        }
      }
      summary << to_string(variant) << ',' << seed << ',' << format_number(threshold) << ','
              << (reached ? std::to_string(*reached) : std::string("NA")) << ',' << format_number(last_kl) << '\n';
    }
  }
  run.write("ablation.csv", metrics.str());
  run.write("ablation_summary.csv", summary.str());
  return run.finish();
}

RunManifest run_oracle(const ExperimentConfig& config, const fs::path& out) {
  Run run("oracle", config, out);
  auto problem = build_problem(config);
  const auto& space = problem.base->space();
  if (!space.enumerable()) {
    throw Error(ErrorKind::UniverseTooLarge, "space: universe of " + std::to_string(space.universe_size()) +
                                                 " sequences exceeds the enumeration guard");
  }
  auto cfg = config;
  cfg.fit.config.sgd.seed = config.seed;
  const auto fit = fit_ebm(cfg, problem);
  const auto ex = exact_normalize(fit.ebm);
  const auto a = exact_distribution(*problem.base);
  const auto features = feature_table(space, problem.constraints);
  const auto moments = exact_moments(ex.probs, features);
  const auto base_moments = exact_moments(a, features);

  json doc;
  doc["mode"] = std::string(to_string(fit.ebm.mode()));
  doc["universe_size"] = space.universe_size();
  doc["z"] = ex.z;
  doc["log_z"] = ex.log_z;
  doc["kl_p_a"] = exact_kl(ex.probs, a);
  json constraints = json::array();
  for (std::size_t j = 0; j < problem.constraints.size(); ++j) {
    json c;
    c["id"] = problem.constraints[j].feature.id();
    c["target"] = problem.constraints[j].target;
    c["lambda"] = j < fit.ebm.lambda().size() ? number_or_null(fit.ebm.lambda()[j]) : json(nullptr);
    c["base_moment"] = base_moments[j];
    c["p_moment"] = moments[j];
    constraints.push_back(c);
  }
  doc["constraints"] = constraints;
  json members = json::array();
  double worst = 0.0;
  for (std::uint64_t i = 0; i < 5; ++i) {
    const auto c = moment_matched_member(ex.probs, features, config.seed + i);
    const double r = pythagorean_residual(c, ex.probs, a);
    worst = std::max(worst, r);
    members.push_back({{"seed", config.seed + i}, {"kl_c_a", exact_kl(c, a)}, {"kl_c_p", exact_kl(c, ex.probs)},
                       {"residual", r}});
  }
  doc["pythagorean"] = {{"members", members}, {"max_residual", worst}};
  run.write("oracle_report.json", doc.dump(2) + "\n");
  return run.finish();
}

RunManifest run_eval(const ExperimentConfig& config, const fs::path& out) {
  const fs::path model_path = config.eval.model ? *config.eval.model : out / "policy.json";
  auto policy = deserialize_model(read_file(model_path, "eval.model"));
  Run run("eval", config, out);
  auto problem = build_problem(config);
  if (!(policy.space() == problem.base->space())) {
    config_error("eval.model", "model space differs from the configured base model");
  }
  auto cfg = config;
  cfg.fit.config.sgd.seed = config.seed;
  const auto fit = fit_ebm(cfg, problem);
  const auto exact = exact_reference(config, fit.ebm);
  Rng rng(config.seed);
  const auto record = snapshot(0, fit.ebm, policy, 0.0, config.eval.sample_size, rng, exact.get());
  const MetricsCsv csv(problem.constraints.ids(), exact != nullptr);
  std::ostringstream metrics;
  csv.write_header(metrics);
  csv.write_row(metrics, "eval", record);
  run.write("metrics.csv", metrics.str());
  Rng sample_rng(config.seed ^ 0x5a4d91e5ULL);
  const auto samples = policy.sample(sample_rng, config.eval.sample_size);
  run.write("samples.txt", render_samples(policy.space(), samples));
  run.write("zipf.csv", zipf_csv(samples, policy.vocabulary()));
  return run.finish();
}

std::vector<double> moment_matched_member(std::span<const double> p, const std::vector<std::vector<double>>& features,
                                          std::uint64_t seed, double strength) {
  const std::size_t n = p.size();
  auto dot = [&](const std::vector<double>& u, const std::vector<double>& v) {
    double s = 0.0;
    for (std::size_t i = 0; i < n; ++i) s += p[i] * u[i] * v[i];
    return s;
  };
  // p-weighted Gram-Schmidt basis of span{1, phi_1, ..., phi_m}.
  std::vector<std::vector<double>> basis;
  const std::size_t m = features.empty() ? 0 : features[0].size();
  for (std::size_t j = 0; j <= m; ++j) {
    std::vector<double> v(n);
    for (std::size_t i = 0; i < n; ++i) v[i] = j == 0 ? 1.0 : features[i][j - 1];
    for (const auto& b : basis) {
      const double c = dot(v, b);
      for (std::size_t i = 0; i < n; ++i) v[i] -= c * b[i];
    }
    const double norm = std::sqrt(dot(v, v));
    if (norm < 1e-12) continue;
    for (auto& x : v) x /= norm;
    basis.push_back(std::move(v));
  }
  Rng rng(seed);
  std::vector<double> h(n);
  for (std::size_t i = 0; i < n; ++i) h[i] = p[i] > 0.0 ? 2.0 * rng.uniform() - 1.0 : 0.0;
  for (int pass = 0; pass < 2; ++pass) {
    for (const auto& b : basis) {
      const double c = dot(h, b);
      for (std::size_t i = 0; i < n; ++i) h[i] -= c * b[i];
    }
  }
  double peak = 0.0;
  for (std::size_t i = 0; i < n; ++i) {
    if (p[i] > 0.0) peak = std::max(peak, std::abs(h[i]));
  }
  const double eps = peak > 0.0 ? strength / peak : 0.0;
  std::vector<double> c(n);
  for (std::size_t i = 0; i < n; ++i) c[i] = p[i] * (1.0 + eps * h[i]);
  return c;
}

double pythagorean_residual(std::span<const double> c, std::span<const double> p, std::span<const double> a) {
  return std::abs(exact_kl(c, a) - exact_kl(c, p) - exact_kl(p, a));
}

int exit_code(ErrorKind kind) {
  switch (kind) {
    case ErrorKind::UniverseTooLarge:
      return 4;
    case ErrorKind::UnattainableTarget:
    case ErrorKind::NoAcceptedSamples:
    case ErrorKind::EmptySupport:
    case ErrorKind::DegenerateWeights:
    case ErrorKind::SupportViolation:
    case ErrorKind::NonpositiveZ:
    case ErrorKind::TooFewSamples:
      return 3;
    default:
      return 2;
  }
}

}  // namespace gdc
