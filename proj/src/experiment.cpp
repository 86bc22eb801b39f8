#include "nhsim/experiment.hpp"

#include "nhsim/errors.hpp"
#include "nhsim/hash.hpp"

#include <charconv>
#include <cmath>
#include <exception>
#include <fstream>
#include <iostream>
#include <limits>
#include <set>
#include <sstream>
#include <thread>

namespace nhsim {

namespace {

constexpr double kNaN = std::numeric_limits<double>::quiet_NaN();

using json = nlohmann::json;

// Rejects keys outside `allowed` so typos in configs surface as errors instead of silent defaults.
void check_keys(const json &obj, const char *section, std::initializer_list<const char *> allowed) {
    if (!obj.is_object()) throw Error(ErrorKind::ConfigError, std::string(section) + " must be an object");
    const std::set<std::string> known(allowed.begin(), allowed.end());
    for (const auto &item : obj.items())
        if (!known.count(item.key())) throw Error(ErrorKind::ConfigError, std::string("unknown key '") + item.key() + "' in " + section);
}

template <class T>
void read(const json &obj, const char *key, T &out) {
    if (auto it = obj.find(key); it != obj.end() && !it->is_null()) out = it->get<T>();
}

template <class T>
void read_optional(const json &obj, const char *key, std::optional<T> &out) {
    if (auto it = obj.find(key); it != obj.end()) {
        if (it->is_null())
            out.reset();
        else
            out = it->get<T>();
    }
}

std::string method_name(OptimizerMethod m) { return m == OptimizerMethod::PlainGradient ? "plain-gradient" : "adaptive-moment"; }
std::string init_name(InitMode m) { return m == InitMode::Zeros ? "zeros" : "random-uniform"; }

OptimizerMethod parse_method(const std::string &s) {
    if (s == "plain-gradient") return OptimizerMethod::PlainGradient;
    if (s == "adaptive-moment") return OptimizerMethod::AdaptiveMoment;
    throw Error(ErrorKind::ConfigError, "optimizer.method must be plain-gradient or adaptive-moment, got " + s);
}

InitMode parse_init(const std::string &s) {
    if (s == "zeros") return InitMode::Zeros;
    if (s == "random-uniform") return InitMode::RandomUniform;
    throw Error(ErrorKind::ConfigError, "init must be zeros or random-uniform, got " + s);
}

std::string mode_name(SimulationMode m) {
    switch (m) {
    case SimulationMode::Vqa: return "vqa";
    case SimulationMode::Exact: return "exact";
    case SimulationMode::None: return "none";
    }
    return "vqa";
}

SimulationMode parse_mode(const std::string &s) {
    if (s == "vqa") return SimulationMode::Vqa;
    if (s == "exact") return SimulationMode::Exact;
    if (s == "none") return SimulationMode::None;
    throw Error(ErrorKind::ConfigError, "simulation.mode must be vqa, exact or none, got " + s);
}

json optimizer_json(const OptimizerConfig &o) {
    return {{"method", method_name(o.method)},     {"learning_rate", o.learning_rate}, {"max_iterations", o.max_iterations},
            {"target_fitness", o.target_fitness}, {"seed", o.seed},                   {"init", init_name(o.init)},
            {"init_range", o.init_range}};
}

json point_json(const SweepPoint &p) {
    return {{"n_sites", p.ising.n_sites},
            {"coupling", p.ising.coupling},
            {"field", p.ising.field},
            {"perturbation_index", p.perturbation.index},
            {"kappa", p.perturbation.strength}};
}

void require(bool ok, const std::string &message) {
    if (!ok) throw Error(ErrorKind::ConfigError, message);
}

// Deterministic merge target for per-task outcomes.
struct TaskOutcome {
    std::optional<std::string> warning;
    std::optional<json> failure;
    std::optional<std::string> cache_key;
    bool exhausted = false;
};

void merge(RunReport &report, const TaskOutcome &o) {
    if (o.warning) report.warnings.push_back(*o.warning);
    if (o.failure) {
        report.failures.push_back(*o.failure);
        ++report.numerical_failures;
    }
    if (o.cache_key) report.cache_keys.push_back(*o.cache_key);
    if (o.exhausted) ++report.budget_exhausted;
}

// Rethrows the first non-numerical error seen by a worker once all workers have finished.
class ErrorSlot {
  public:
    void capture(std::exception_ptr e) {
        std::lock_guard lock(mutex_);
        if (!error_) error_ = e;
    }
    void rethrow() const {
        if (error_) std::rethrow_exception(error_);
    }

  private:
    std::mutex mutex_;
    std::exception_ptr error_;
};

std::ofstream open_output(const std::filesystem::path &path) {
    std::ofstream out(path, std::ios::binary);
    if (!out) throw Error(ErrorKind::IoError, "cannot write " + path.string());
    return out;
}

CompiledGate compile_target(const OperatorMatrix &target, const Entangler &ent, int layers, double t_s, const OptimizerConfig &opt,
                            const AnsatzParameters *warm) {
    OptimizationTrace trace = warm ? optimize_from(*warm, target, ent, opt) : optimize(target, ent, layers, t_s, opt);
    CompiledGate gate;
    gate.params = std::move(trace.final_theta);
    gate.target_hash = matrix_hash(target);
    gate.fitness_achieved = trace.best_fitness;
    gate.iterations_used = trace.iterations.empty() ? 0 : trace.iterations.back().iteration;
    return gate;
}

struct SimOutcome {
    double le = kNaN;
    double fitness = kNaN;
    double success = kNaN;
    std::optional<AnsatzParameters> params;
    TaskOutcome task;
};

SimOutcome simulate_point(const ExperimentConfig &cfg, const SweepPoint &point, const ModelInstance &model, double t,
                          const GateCache &cache, const AnsatzParameters *warm, const std::string &warm_key) {
    SimOutcome out;
    try {
        const int n_qubits = point.ising.n_sites + 1;
        OperatorMatrix evolution;
        if (cfg.simulation.mode == SimulationMode::Exact) {
            evolution = target_unitary(model.hs, dilation_for(cfg, t));
            out.fitness = 1.0;
        } else {
            const Entangler ent = entangler_for(cfg, n_qubits);
            const std::string extra = warm ? "warm:" + warm_key : std::string{};
            const std::string key = compile_cache_key(cfg, point, t, cfg.ansatz.layers, extra);
            out.task.cache_key = key;
            const CompiledGate gate = cache.get_or_compile(key, [&] {
                const OperatorMatrix target = target_unitary(model.hs, dilation_for(cfg, t));
                return compile_target(target, ent, cfg.ansatz.layers, cfg.ansatz.t_s, cfg.optimizer, warm);
            });
            evolution = ansatz_unitary(gate.params, ent);
            out.fitness = gate.fitness_achieved;
            out.params = gate.params;
            if (gate.fitness_achieved < cfg.optimizer.target_fitness) {
                std::ostringstream os;
                os << point.label() << " t=" << format_number(t) << ": compiled fitness " << format_number(gate.fitness_achieved)
                   << " below target " << format_number(cfg.optimizer.target_fitness);
                out.task.warning = os.str();
            }
        }
        const DilatedRunResult run = run_dilated(model.rho0, evolution, cfg.dilation.eta0);
        out.le = loschmidt_echo(model.rho0, run.system_state);
        out.success = run.success_probability;
    } catch (const Error &e) {
        if (!is_numerical_failure(e.kind())) throw;
        out.task.failure = json{{"point", point.label()}, {"t", t}, {"kind", std::string(to_string(e.kind()))}, {"message", e.what()}};
        out.le = out.fitness = out.success = kNaN;
        out.params.reset();
    }
    return out;
}

std::vector<double> theory_echo(const ModelInstance &model, const std::vector<double> &times, const TimeGrid &grid) {
    const auto states = exact_nonhermitian_trajectory(model.hs, model.rho0, grid.t_start, grid.t_step, times.size());
    std::vector<double> echo(times.size());
    for (std::size_t k = 0; k < times.size(); ++k) echo[k] = loschmidt_echo(model.rho0, states[k]);
    return echo;
}

SweepPoint sub_model(const ExperimentConfig &cfg, int n_qubits) {
    SweepPoint p{cfg.ising, cfg.perturbation};
    p.ising.n_sites = n_qubits - 1;
    p.perturbation.index = std::min(p.perturbation.index, p.ising.n_sites);
    return p;
}

} // namespace

std::vector<double> TimeGrid::points() const {
    std::vector<double> out;
    if (!(t_step > 0.0) || t_end < t_start) return out;
    const auto count = static_cast<std::size_t>(std::floor((t_end - t_start) / t_step + 1e-9)) + 1;
    out.reserve(count);
    for (std::size_t k = 0; k < count; ++k) out.push_back(t_start + static_cast<double>(k) * t_step);
    return out;
}

void ExperimentConfig::validate() const {
    try {
        ising.validate();
    } catch (const Error &e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
    require(perturbation.index >= 1 && perturbation.index <= ising.n_sites, "model.perturbation_index must lie in 1..n_sites");
    require(std::isfinite(perturbation.strength), "model.kappa must be finite");
    require(beta >= 0.0, "beta must be non-negative");
    dilation.validate();
    require(segments_per_unit_time > 0.0, "dilation.segments_per_unit_time must be positive");
    require(ansatz.layers >= 0, "ansatz.layers must be non-negative");
    require(ansatz.t_s >= 0.0, "ansatz.t_s must be non-negative");
    optimizer.validate();
    require(time_grid.t_step > 0.0, "time_grid.t_step must be positive");
    require(time_grid.t_end >= time_grid.t_start, "time_grid must be increasing");
    require(time_grid.t_start >= 0.0, "time_grid.t_start must be non-negative");
    if (average_window) {
        require(average_window->length > 0.0, "average_window.T must be positive");
        require(time_grid.t_start <= average_window->tau + 1e-9, "time_grid must start at or before tau");
        require(time_grid.t_end >= average_window->tau + average_window->length - 1e-9, "time_grid.t_end must reach tau + T");
    }
    for (double g : sweep.fields) require(g >= 0.0, "sweep.field entries must be non-negative");
    for (int n : sweep.n_sites) require(n >= 1 && n <= 11, "sweep.n_sites entries must lie in 1..11");
    for (int n : sweep.perturbation_indices) require(n >= 1, "sweep.perturbation_index entries must be >= 1");
    require(simulation.stride >= 1, "simulation.stride must be >= 1");
    require(layer_study.restarts >= 1, "layer_study.restarts must be >= 1");
    require(layer_study.max_layers >= 1, "layer_study.max_layers must be >= 1");
    for (int n : layer_study.n_qubits) require(n >= 2 && n <= 12, "layer_study.n_qubits entries must lie in 2..12");
    for (double f : layer_study.f_targets) require(f > 0.0 && f <= 1.0, "layer_study.f_targets must lie in (0, 1]");
    for (int n : convergence.n_qubits) require(n >= 2 && n <= 12, "convergence_study.n_qubits entries must lie in 2..12");
    require(convergence.layers.size() == 1 || convergence.layers.size() == convergence.n_qubits.size(),
            "convergence_study.layers needs one entry or one per n_qubits entry");
    for (int l : convergence.layers) require(l >= 1, "convergence_study.layers entries must be >= 1");
    require(workers >= 1, "workers must be >= 1");
    require(!output.empty(), "output must be a directory path");
    for (const SweepPoint &p : sweep_points(*this))
        require(p.perturbation.index <= p.ising.n_sites, "sweep point " + p.label() + " has perturbation index beyond the chain");
}

json ExperimentConfig::to_json() const {
    json doc;
    doc["model"] = {{"n_sites", ising.n_sites},
                    {"coupling", ising.coupling},
                    {"field", ising.field},
                    {"perturbation_index", perturbation.index},
                    {"kappa", perturbation.strength}};
    doc["beta"] = beta;
    doc["dilation"] = {{"eta0", dilation.eta0},
                       {"positivity_margin", dilation.positivity_margin},
                       {"segments_per_unit_time", segments_per_unit_time},
                       {"sampling", dilation.rule == SamplingRule::Midpoint ? "midpoint" : "endpoint"}};
    doc["ansatz"] = {{"layers", ansatz.layers}, {"t_s", ansatz.t_s}, {"coupling_table", ansatz.coupling_table ? json(*ansatz.coupling_table) : json(nullptr)}};
    doc["optimizer"] = optimizer_json(optimizer);
    doc["time_grid"] = {{"t_start", time_grid.t_start}, {"t_end", time_grid.t_end}, {"t_step", time_grid.t_step}};
    doc["average_window"] = average_window ? json{{"tau", average_window->tau}, {"T", average_window->length}} : json(nullptr);
    doc["sweep"] = {{"field", sweep.fields}, {"n_sites", sweep.n_sites}, {"perturbation_index", sweep.perturbation_indices}};
    doc["simulation"] = {{"mode", mode_name(simulation.mode)}, {"stride", simulation.stride}, {"warm_start", simulation.warm_start}};
    doc["layer_study"] = {{"n_qubits", layer_study.n_qubits}, {"f_targets", layer_study.f_targets}, {"restarts", layer_study.restarts},
                          {"max_layers", layer_study.max_layers}, {"time", layer_study.time}, {"init", init_name(layer_study.init)}};
    doc["convergence_study"] = {{"n_qubits", convergence.n_qubits},
                                {"layers", convergence.layers},
                                {"time", convergence.time},
                                {"report_level", convergence.report_level}};
    doc["compile"] = {{"time", compile.time}, {"matrix_file", compile.matrix_file ? json(*compile.matrix_file) : json(nullptr)}};
    doc["output"] = output;
    doc["cache_dir"] = cache_dir ? json(*cache_dir) : json(nullptr);
    doc["workers"] = workers;
    return doc;
}

ExperimentConfig ExperimentConfig::from_json(const json &doc) {
    ExperimentConfig cfg;
    try {
        check_keys(doc, "config",
                   {"model", "beta", "dilation", "ansatz", "optimizer", "time_grid", "average_window", "sweep", "simulation", "layer_study",
                    "convergence_study", "compile", "output", "cache_dir", "workers", "description"});
        if (auto it = doc.find("model"); it != doc.end()) {
            check_keys(*it, "model", {"n_sites", "coupling", "field", "perturbation_index", "kappa"});
            read(*it, "n_sites", cfg.ising.n_sites);
            read(*it, "coupling", cfg.ising.coupling);
            read(*it, "field", cfg.ising.field);
            read(*it, "perturbation_index", cfg.perturbation.index);
            read(*it, "kappa", cfg.perturbation.strength);
        }
        read(doc, "beta", cfg.beta);
        if (auto it = doc.find("dilation"); it != doc.end()) {
            check_keys(*it, "dilation", {"eta0", "positivity_margin", "segments_per_unit_time", "sampling"});
            read(*it, "eta0", cfg.dilation.eta0);
            read(*it, "positivity_margin", cfg.dilation.positivity_margin);
            read(*it, "segments_per_unit_time", cfg.segments_per_unit_time);
            std::string sampling = "endpoint";
            read(*it, "sampling", sampling);
            if (sampling == "midpoint")
                cfg.dilation.rule = SamplingRule::Midpoint;
            else if (sampling == "endpoint")
                cfg.dilation.rule = SamplingRule::Endpoint;
            else
                throw Error(ErrorKind::ConfigError, "dilation.sampling must be endpoint or midpoint");
        }
        if (auto it = doc.find("ansatz"); it != doc.end()) {
            check_keys(*it, "ansatz", {"layers", "t_s", "coupling_table"});
            read(*it, "layers", cfg.ansatz.layers);
            read(*it, "t_s", cfg.ansatz.t_s);
            read_optional(*it, "coupling_table", cfg.ansatz.coupling_table);
        }
        if (auto it = doc.find("optimizer"); it != doc.end()) {
            check_keys(*it, "optimizer", {"method", "learning_rate", "max_iterations", "target_fitness", "seed", "init", "init_range"});
            std::string method = method_name(cfg.optimizer.method), init = init_name(cfg.optimizer.init);
            read(*it, "method", method);
            read(*it, "init", init);
            cfg.optimizer.method = parse_method(method);
            cfg.optimizer.init = parse_init(init);
            read(*it, "learning_rate", cfg.optimizer.learning_rate);
            read(*it, "max_iterations", cfg.optimizer.max_iterations);
            read(*it, "target_fitness", cfg.optimizer.target_fitness);
            read(*it, "seed", cfg.optimizer.seed);
            read(*it, "init_range", cfg.optimizer.init_range);
        }
        if (auto it = doc.find("time_grid"); it != doc.end()) {
            check_keys(*it, "time_grid", {"t_start", "t_end", "t_step"});
            read(*it, "t_start", cfg.time_grid.t_start);
            read(*it, "t_end", cfg.time_grid.t_end);
            read(*it, "t_step", cfg.time_grid.t_step);
        }
        if (auto it = doc.find("average_window"); it != doc.end() && !it->is_null()) {
            check_keys(*it, "average_window", {"tau", "T"});
            AverageWindow w;
            read(*it, "tau", w.tau);
            read(*it, "T", w.length);
            cfg.average_window = w;
        }
        if (auto it = doc.find("sweep"); it != doc.end()) {
            check_keys(*it, "sweep", {"field", "n_sites", "perturbation_index"});
            read(*it, "field", cfg.sweep.fields);
            read(*it, "n_sites", cfg.sweep.n_sites);
            read(*it, "perturbation_index", cfg.sweep.perturbation_indices);
        }
        if (auto it = doc.find("simulation"); it != doc.end()) {
            check_keys(*it, "simulation", {"mode", "stride", "warm_start"});
            std::string mode = mode_name(cfg.simulation.mode);
            read(*it, "mode", mode);
            cfg.simulation.mode = parse_mode(mode);
            read(*it, "stride", cfg.simulation.stride);
            read(*it, "warm_start", cfg.simulation.warm_start);
        }
        if (auto it = doc.find("layer_study"); it != doc.end()) {
            check_keys(*it, "layer_study", {"n_qubits", "f_targets", "restarts", "max_layers", "time", "init"});
            read(*it, "n_qubits", cfg.layer_study.n_qubits);
            read(*it, "f_targets", cfg.layer_study.f_targets);
            read(*it, "restarts", cfg.layer_study.restarts);
            read(*it, "max_layers", cfg.layer_study.max_layers);
            read(*it, "time", cfg.layer_study.time);
            std::string init = init_name(cfg.layer_study.init);
            read(*it, "init", init);
            cfg.layer_study.init = parse_init(init);
        }
        if (auto it = doc.find("convergence_study"); it != doc.end()) {
            check_keys(*it, "convergence_study", {"n_qubits", "layers", "time", "report_level"});
            read(*it, "n_qubits", cfg.convergence.n_qubits);
            read(*it, "layers", cfg.convergence.layers);
            read(*it, "time", cfg.convergence.time);
            read(*it, "report_level", cfg.convergence.report_level);
        }
        if (auto it = doc.find("compile"); it != doc.end()) {
            check_keys(*it, "compile", {"time", "matrix_file"});
            read(*it, "time", cfg.compile.time);
            read_optional(*it, "matrix_file", cfg.compile.matrix_file);
        }
        read(doc, "output", cfg.output);
        read_optional(doc, "cache_dir", cfg.cache_dir);
        read(doc, "workers", cfg.workers);
    } catch (const json::exception &e) {
        throw Error(ErrorKind::ConfigError, e.what());
    }
    return cfg;
}

ExperimentConfig ExperimentConfig::load(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::ConfigError, "cannot open config " + path.string());
    json doc;
    try {
        in >> doc;
    } catch (const json::exception &e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
    ExperimentConfig cfg = from_json(doc);
    // relative table paths resolve against the config file
    if (cfg.ansatz.coupling_table && std::filesystem::path(*cfg.ansatz.coupling_table).is_relative())
        cfg.ansatz.coupling_table = (path.parent_path() / *cfg.ansatz.coupling_table).lexically_normal().string();
    if (cfg.compile.matrix_file && std::filesystem::path(*cfg.compile.matrix_file).is_relative())
        cfg.compile.matrix_file = (path.parent_path() / *cfg.compile.matrix_file).lexically_normal().string();
    return cfg;
}

CouplingTable ExperimentConfig::coupling_table() const {
    if (!ansatz.coupling_table) return CouplingTable::synthetic_default();
    return CouplingTable::load(*ansatz.coupling_table);
}

std::filesystem::path ExperimentConfig::cache_path() const {
    return cache_dir ? std::filesystem::path(*cache_dir) : std::filesystem::path(output) / "cache";
}

std::string SweepPoint::label() const {
    return "Ns" + std::to_string(ising.n_sites) + "_g" + format_number(ising.field) + "_n" + std::to_string(perturbation.index);
}

std::vector<SweepPoint> sweep_points(const ExperimentConfig &cfg) {
    const std::vector<int> sizes = cfg.sweep.n_sites.empty() ? std::vector<int>{cfg.ising.n_sites} : cfg.sweep.n_sites;
    const std::vector<double> fields = cfg.sweep.fields.empty() ? std::vector<double>{cfg.ising.field} : cfg.sweep.fields;
    const std::vector<int> indices =
        cfg.sweep.perturbation_indices.empty() ? std::vector<int>{cfg.perturbation.index} : cfg.sweep.perturbation_indices;
    std::vector<SweepPoint> points;
    for (int n : sizes)
        for (double g : fields)
            for (int idx : indices) {
                SweepPoint p{cfg.ising, cfg.perturbation};
                p.ising.n_sites = n;
                p.ising.field = g;
                p.perturbation.index = idx;
                points.push_back(p);
            }
    return points;
}

ModelInstance build_model(const SweepPoint &point, double beta) {
    ModelInstance m;
    m.h0 = build_ising(point.ising);
    m.hs = build_Hs(point.ising, point.perturbation);
    m.rho0 = thermal_state(m.h0, beta);
    return m;
}

DilationConfig dilation_for(const ExperimentConfig &cfg, double t) {
    DilationConfig d = cfg.dilation;
    d.total_time = t;
    d.segments = DilationConfig::segments_for(t, cfg.segments_per_unit_time);
    return d;
}

Entangler entangler_for(const ExperimentConfig &cfg, int n_qubits) {
    const CouplingTable table = cfg.coupling_table();
    if (table.n_qubits() < n_qubits)
        throw Error(ErrorKind::ConfigError, "coupling table covers " + std::to_string(table.n_qubits()) + " qubits, need " +
                                                std::to_string(n_qubits));
    return make_entangler(build_entangler_generator(table.restricted(n_qubits)), cfg.ansatz.t_s);
}

std::optional<CompiledGate> GateCache::find(const std::string &key) const {
    const auto path = dir_ / (key + ".json");
    std::error_code ec;
    if (!std::filesystem::exists(path, ec)) return std::nullopt;
    try {
        return CompiledGate::load(path);
    } catch (const Error &) {
        return std::nullopt; // unreadable entries are recompiled
    }
}

void GateCache::store(const std::string &key, const CompiledGate &gate) const {
    std::filesystem::create_directories(dir_);
    // write then rename so concurrent readers never see a partial file
    std::ostringstream tmp_name;
    tmp_name << key << ".json.tmp." << std::this_thread::get_id();
    const auto tmp = dir_ / tmp_name.str();
    gate.save(tmp);
    std::filesystem::rename(tmp, dir_ / (key + ".json"));
}

CompiledGate GateCache::get_or_compile(const std::string &key, const std::function<CompiledGate()> &compile) const {
    if (auto hit = find(key)) {
        ++hits_;
        return *hit;
    }
    ++misses_;
    CompiledGate gate = compile();
    store(key, gate);
    return gate;
}

std::string compile_cache_key(const ExperimentConfig &cfg, const SweepPoint &point, double t, int layers, const std::string &extra) {
    const int n_qubits = point.ising.n_sites + 1;
    const CouplingTable table = cfg.coupling_table();
    json material = {
        {"model", point_json(point)},
        {"dilation",
         {{"eta0", cfg.dilation.eta0},
          {"positivity_margin", cfg.dilation.positivity_margin},
          {"segments_per_unit_time", cfg.segments_per_unit_time},
          {"sampling", cfg.dilation.rule == SamplingRule::Midpoint ? "midpoint" : "endpoint"}}},
        {"ansatz",
         {{"layers", layers},
          {"t_s", cfg.ansatz.t_s},
          {"couplings", table.n_qubits() >= n_qubits ? table.restricted(n_qubits).to_json() : table.to_json()}}},
        {"optimizer", optimizer_json(cfg.optimizer)},
        {"t", t},
        {"extra", extra},
    };
    return hex_digest(fnv1a64(material.dump()));
}

void parallel_for(std::size_t n, int workers, const std::function<void(std::size_t)> &fn) {
    std::atomic<std::size_t> next{0};
    auto body = [&] {
        for (std::size_t i; (i = next.fetch_add(1)) < n;) fn(i);
    };
    const auto count = static_cast<std::size_t>(std::max(1, workers));
    if (count == 1 || n <= 1) {
        body();
        return;
    }
    std::vector<std::jthread> pool;
    pool.reserve(std::min(count, n));
    for (std::size_t w = 0; w < std::min(count, n); ++w) pool.emplace_back(body);
}

std::string format_number(double value) {
    if (std::isnan(value)) return {};
    char buf[64];
    const auto res = std::to_chars(buf, buf + sizeof buf, value);
    return std::string(buf, res.ptr);
}

void write_echo_csv(const std::filesystem::path &path, const EchoSeries &series) {
    auto out = open_output(path);
    out << "t,le_theory,le_sim,fitness,success_prob\n";
    for (std::size_t k = 0; k < series.times.size(); ++k) {
        out << format_number(series.times[k]) << ',' << format_number(series.le_theory[k]) << ',' << format_number(series.le_simulated[k])
            << ',' << format_number(series.fitness[k]) << ',' << format_number(series.success_prob[k]) << '\n';
    }
}

LeCurveResult run_le_curve(const ExperimentConfig &cfg, RunReport &report) {
    cfg.validate();
    LeCurveResult result;
    result.points = sweep_points(cfg);
    const std::vector<double> times = cfg.time_grid.points();
    const std::size_t n_points = result.points.size();

    std::vector<ModelInstance> models;
    models.reserve(n_points);
    for (const auto &p : result.points) models.push_back(build_model(p, cfg.beta));

    result.series.resize(n_points);
    for (auto &s : result.series) {
        s.times = times;
        s.le_theory.assign(times.size(), kNaN);
        s.le_simulated.assign(times.size(), kNaN);
        s.fitness.assign(times.size(), kNaN);
        s.success_prob.assign(times.size(), kNaN);
    }

    ErrorSlot errors;
    parallel_for(n_points, cfg.workers, [&](std::size_t p) {
        try {
            result.series[p].le_theory = theory_echo(models[p], times, cfg.time_grid);
        } catch (...) {
            errors.capture(std::current_exception());
        }
    });
    errors.rethrow();

    if (cfg.simulation.mode != SimulationMode::None) {
        const GateCache cache(cfg.cache_path());
        std::vector<std::size_t> sim_indices;
        for (std::size_t k = 0; k < times.size(); k += static_cast<std::size_t>(cfg.simulation.stride)) sim_indices.push_back(k);

        std::vector<std::vector<SimOutcome>> outcomes(n_points, std::vector<SimOutcome>(sim_indices.size()));
        auto record = [&](std::size_t p, std::size_t j, SimOutcome o) {
            const std::size_t k = sim_indices[j];
            result.series[p].le_simulated[k] = o.le;
            result.series[p].fitness[k] = o.fitness;
            result.series[p].success_prob[k] = o.success;
            outcomes[p][j] = std::move(o);
        };

        if (cfg.simulation.warm_start && cfg.simulation.mode == SimulationMode::Vqa) {
            parallel_for(n_points, cfg.workers, [&](std::size_t p) {
                try {
                    std::optional<AnsatzParameters> warm;
                    std::string warm_key;
                    for (std::size_t j = 0; j < sim_indices.size(); ++j) {
                        SimOutcome o = simulate_point(cfg, result.points[p], models[p], times[sim_indices[j]], cache, warm ? &*warm : nullptr,
                                                      warm_key);
                        if (o.params) {
                            warm = o.params;
                            warm_key = o.task.cache_key.value_or("");
                        }
                        record(p, j, std::move(o));
                    }
                } catch (...) {
                    errors.capture(std::current_exception());
                }
            });
        } else {
            const std::size_t per_point = sim_indices.size();
            parallel_for(n_points * per_point, cfg.workers, [&](std::size_t task) {
                const std::size_t p = task / per_point, j = task % per_point;
                try {
                    record(p, j, simulate_point(cfg, result.points[p], models[p], times[sim_indices[j]], cache, nullptr, {}));
                } catch (...) {
                    errors.capture(std::current_exception());
                }
            });
        }
        errors.rethrow();
        for (const auto &row : outcomes)
            for (const auto &o : row) merge(report, o.task);
    }

    std::filesystem::create_directories(cfg.output);
    for (std::size_t p = 0; p < n_points; ++p) {
        const auto path = std::filesystem::path(cfg.output) / ("le_curve_" + result.points[p].label() + ".csv");
        write_echo_csv(path, result.series[p]);
        report.outputs.push_back(path.string());
    }
    return result;
}

std::vector<AverageRow> run_avg_le_sweep(const ExperimentConfig &cfg, RunReport &report) {
    cfg.validate();
    if (!cfg.average_window) throw Error(ErrorKind::ConfigError, "avg-le needs an average_window");
    const AverageWindow window = *cfg.average_window;
    const std::vector<SweepPoint> points = sweep_points(cfg);
    const std::vector<double> times = cfg.time_grid.points();
    const double window_end = window.tau + window.length;

    // simulated path: every stride-th grid point inside the window, plus the points bracketing its edges
    std::vector<std::size_t> sim_indices;
    if (cfg.simulation.mode != SimulationMode::None) {
        std::size_t lo = 0, hi = times.size() - 1;
        while (lo + 1 < times.size() && times[lo + 1] <= window.tau + 1e-9) ++lo;
        while (hi > 0 && times[hi - 1] >= window_end - 1e-9) --hi;
        for (std::size_t k = lo; k < hi; k += static_cast<std::size_t>(cfg.simulation.stride)) sim_indices.push_back(k);
        sim_indices.push_back(hi);
    }

    std::vector<AverageRow> rows(points.size());
    std::vector<std::vector<SimOutcome>> outcomes(points.size(), std::vector<SimOutcome>(sim_indices.size()));
    std::vector<ModelInstance> models;
    for (const auto &p : points) models.push_back(build_model(p, cfg.beta));
    const GateCache cache(cfg.cache_path());
    ErrorSlot errors;

    parallel_for(points.size(), cfg.workers, [&](std::size_t p) {
        try {
            AverageRow &row = rows[p];
            row.n_sites = points[p].ising.n_sites;
            row.field = points[p].ising.field;
            row.index = points[p].perturbation.index;
            row.avg_theory = average_le(times, theory_echo(models[p], times, cfg.time_grid), window.tau, window.length);
            row.avg_simulated = kNaN;
        } catch (...) {
            errors.capture(std::current_exception());
        }
    });
    errors.rethrow();

    if (!sim_indices.empty()) {
        const std::size_t per_point = sim_indices.size();
        parallel_for(points.size() * per_point, cfg.workers, [&](std::size_t task) {
            const std::size_t p = task / per_point, j = task % per_point;
            try {
                outcomes[p][j] = simulate_point(cfg, points[p], models[p], times[sim_indices[j]], cache, nullptr, {});
            } catch (...) {
                errors.capture(std::current_exception());
            }
        });
        errors.rethrow();
        for (std::size_t p = 0; p < points.size(); ++p) {
            std::vector<double> ts, ls;
            bool complete = true;
            for (std::size_t j = 0; j < sim_indices.size(); ++j) {
                merge(report, outcomes[p][j].task);
                if (std::isnan(outcomes[p][j].le)) complete = false;
                ts.push_back(times[sim_indices[j]]);
                ls.push_back(outcomes[p][j].le);
            }
            // piecewise-linear between compiled points
            if (complete) rows[p].avg_simulated = average_le(ts, ls, window.tau, window.length);
        }
    }

    std::filesystem::create_directories(cfg.output);
    const auto path = std::filesystem::path(cfg.output) / "avg_le.csv";
    auto out = open_output(path);
    out << "n_sites,g,n,avg_le_theory,avg_le_sim\n";
    for (const auto &row : rows)
        out << row.n_sites << ',' << format_number(row.field) << ',' << row.index << ',' << format_number(row.avg_theory) << ','
            << format_number(row.avg_simulated) << '\n';
    report.outputs.push_back(path.string());
    return rows;
}

namespace {

// Smallest L in [1, max_layers] whose optimization reaches opt.target_fitness: doubling, then bisection.
int minimal_layers(const OperatorMatrix &target, const Entangler &ent, double t_s, const OptimizerConfig &opt, int max_layers) {
    auto reaches = [&](int layers) { return optimize(target, ent, layers, t_s, opt).converged; };
    int fail = 0, pass = 1;
    while (pass < max_layers && !reaches(pass)) {
        fail = pass;
        pass = std::min(2 * pass, max_layers);
    }
    if (pass == max_layers && fail < max_layers && !reaches(max_layers)) return -1;
    while (pass - fail > 1) {
        const int mid = fail + (pass - fail) / 2;
        if (reaches(mid))
            pass = mid;
        else
            fail = mid;
    }
    return pass;
}

} // namespace

std::vector<LayerStudyRow> run_layer_study(const ExperimentConfig &cfg, RunReport &report) {
    cfg.validate();
    const auto &study = cfg.layer_study;
    struct Cell {
        int n_qubits;
        double f_target;
        int restart;
    };
    std::vector<Cell> cells;
    for (int n : study.n_qubits)
        for (double f : study.f_targets)
            for (int r = 0; r < study.restarts; ++r) cells.push_back({n, f, r});

    std::vector<OperatorMatrix> targets(study.n_qubits.size());
    std::vector<Entangler> ents(study.n_qubits.size());
    for (std::size_t i = 0; i < study.n_qubits.size(); ++i) {
        const SweepPoint point = sub_model(cfg, study.n_qubits[i]);
        targets[i] = target_unitary(build_Hs(point.ising, point.perturbation), dilation_for(cfg, study.time));
        ents[i] = entangler_for(cfg, study.n_qubits[i]);
    }

    std::vector<int> found(cells.size(), -1);
    ErrorSlot errors;
    parallel_for(cells.size(), cfg.workers, [&](std::size_t c) {
        try {
            const auto slot = static_cast<std::size_t>(
                std::find(study.n_qubits.begin(), study.n_qubits.end(), cells[c].n_qubits) - study.n_qubits.begin());
            OptimizerConfig opt = cfg.optimizer;
            opt.target_fitness = cells[c].f_target;
            opt.init = study.init;
            opt.seed = cfg.optimizer.seed + static_cast<std::uint64_t>(cells[c].restart);
            found[c] = minimal_layers(targets[slot], ents[slot], cfg.ansatz.t_s, opt, study.max_layers);
        } catch (...) {
            errors.capture(std::current_exception());
        }
    });
    errors.rethrow();

    std::vector<LayerStudyRow> rows;
    for (std::size_t c = 0; c < cells.size(); c += static_cast<std::size_t>(study.restarts)) {
        LayerStudyRow row;
        row.n_qubits = cells[c].n_qubits;
        row.f_target = cells[c].f_target;
        std::vector<double> ok;
        for (int r = 0; r < study.restarts; ++r) {
            const int layers = found[c + static_cast<std::size_t>(r)];
            row.per_restart.push_back(layers);
            if (layers < 0)
                ++row.exhausted;
            else
                ok.push_back(layers);
        }
        if (!ok.empty()) {
            double mean = 0.0;
            for (double v : ok) mean += v;
            mean /= static_cast<double>(ok.size());
            double var = 0.0;
            for (double v : ok) var += (v - mean) * (v - mean);
            row.mean_layers = mean;
            row.std_layers = ok.size() > 1 ? std::sqrt(var / static_cast<double>(ok.size() - 1)) : 0.0;
        } else {
            row.mean_layers = row.std_layers = kNaN;
        }
        if (row.exhausted > 0) {
            report.budget_exhausted += row.exhausted;
            report.warnings.push_back("N=" + std::to_string(row.n_qubits) + " F=" + format_number(row.f_target) + ": " +
                                      std::to_string(row.exhausted) + " restart(s) exhausted the layer budget");
        }
        rows.push_back(std::move(row));
    }

    std::filesystem::create_directories(cfg.output);
    const auto path = std::filesystem::path(cfg.output) / "layer_study.csv";
    auto out = open_output(path);
    out << "n_qubits,f_target,mean_layers,std_layers,exhausted\n";
    for (const auto &row : rows)
        out << row.n_qubits << ',' << format_number(row.f_target) << ',' << format_number(row.mean_layers) << ','
            << format_number(row.std_layers) << ',' << row.exhausted << '\n';
    report.outputs.push_back(path.string());
    return rows;
}

std::vector<ConvergenceRow> run_convergence_study(const ExperimentConfig &cfg, RunReport &report) {
    cfg.validate();
    const auto &study = cfg.convergence;
    std::vector<ConvergenceRow> rows(study.n_qubits.size());
    ErrorSlot errors;
    parallel_for(rows.size(), cfg.workers, [&](std::size_t i) {
        try {
            const int n = study.n_qubits[i];
            const int layers = study.layers.size() == 1 ? study.layers[0] : study.layers[i];
            const SweepPoint point = sub_model(cfg, n);
            const OperatorMatrix target = target_unitary(build_Hs(point.ising, point.perturbation), dilation_for(cfg, study.time));
            rows[i].n_qubits = n;
            rows[i].layers = layers;
            rows[i].trace = optimize(target, entangler_for(cfg, n), layers, cfg.ansatz.t_s, cfg.optimizer);
            rows[i].first_reaching = rows[i].trace.first_reaching(study.report_level);
        } catch (...) {
            errors.capture(std::current_exception());
        }
    });
    errors.rethrow();

    std::filesystem::create_directories(cfg.output);
    const auto summary_path = std::filesystem::path(cfg.output) / "convergence_summary.csv";
    auto summary = open_output(summary_path);
    summary << "n_qubits,layers,first_iteration_reaching,final_fitness,converged\n";
    for (const auto &row : rows) {
        const auto path = std::filesystem::path(cfg.output) / ("convergence_N" + std::to_string(row.n_qubits) + ".csv");
        auto out = open_output(path);
        out << "iteration,fitness,gradient_max\n";
        for (const auto &rec : row.trace.iterations)
            out << rec.iteration << ',' << format_number(rec.fitness) << ',' << format_number(rec.gradient_max) << '\n';
        report.outputs.push_back(path.string());
        summary << row.n_qubits << ',' << row.layers << ',' << row.first_reaching << ',' << format_number(row.trace.best_fitness) << ','
                << (row.trace.converged ? 1 : 0) << '\n';
        if (row.first_reaching < 0) {
            ++report.budget_exhausted;
            report.warnings.push_back("N=" + std::to_string(row.n_qubits) + " never reached F=" + format_number(study.report_level));
        }
    }
    report.outputs.push_back(summary_path.string());
    return rows;
}

CompileOutcome compile_gate(const ExperimentConfig &cfg, RunReport &report) {
    cfg.validate();
    const SweepPoint point{cfg.ising, cfg.perturbation};
    std::optional<OperatorMatrix> raw;
    std::string extra;
    int n_qubits = point.ising.n_sites + 1;
    if (cfg.compile.matrix_file) {
        raw = load_matrix(*cfg.compile.matrix_file);
        if (!is_unitary(*raw, 1e-8)) throw Error(ErrorKind::ConfigError, "target matrix is not unitary");
        n_qubits = qubit_count(raw->rows());
        extra = "matrix:" + matrix_hash(*raw);
    }
    const Entangler ent = entangler_for(cfg, n_qubits);
    const double t = cfg.compile.time;
    const std::string key = raw ? hex_digest(fnv1a64(json{{"ansatz", {{"layers", cfg.ansatz.layers}, {"t_s", cfg.ansatz.t_s},
                                                                      {"couplings", cfg.coupling_table().restricted(n_qubits).to_json()}}},
                                                          {"optimizer", optimizer_json(cfg.optimizer)},
                                                          {"extra", extra}}
                                                         .dump()))
                                : compile_cache_key(cfg, point, t, cfg.ansatz.layers);
    report.cache_keys.push_back(key);

    const GateCache cache(cfg.cache_path());
    CompileOutcome outcome;
    outcome.gate = cache.get_or_compile(key, [&] {
        const OperatorMatrix target = raw ? *raw : target_unitary(build_Hs(point.ising, point.perturbation), dilation_for(cfg, t));
        return compile_target(target, ent, cfg.ansatz.layers, cfg.ansatz.t_s, cfg.optimizer, nullptr);
    });
    outcome.cache_hit = cache.hits() > 0;
    outcome.duration = circuit_duration(outcome.gate.params);

    std::filesystem::create_directories(cfg.output);
    outcome.written = std::filesystem::path(cfg.output) / "compiled_gate.json";
    outcome.gate.save(outcome.written);
    report.outputs.push_back(outcome.written.string());
    if (outcome.gate.fitness_achieved < cfg.optimizer.target_fitness) {
        ++report.budget_exhausted;
        report.warnings.push_back("compiled fitness " + format_number(outcome.gate.fitness_achieved) + " below target " +
                                  format_number(cfg.optimizer.target_fitness));
    }
    return outcome;
}

OperatorMatrix load_matrix(const std::filesystem::path &path) {
    std::ifstream in(path);
    if (!in) throw Error(ErrorKind::IoError, "cannot open matrix file " + path.string());
    try {
        json doc;
        in >> doc;
        const int dim = doc.at("dim").get<int>();
        const auto re = doc.at("real").get<std::vector<std::vector<double>>>();
        const auto im = doc.contains("imag") ? doc.at("imag").get<std::vector<std::vector<double>>>()
                                             : std::vector<std::vector<double>>(dim, std::vector<double>(dim, 0.0));
        if (dim < 1 || re.size() != static_cast<std::size_t>(dim) || im.size() != static_cast<std::size_t>(dim))
            throw Error(ErrorKind::ConfigError, "matrix file rows do not match dim");
        OperatorMatrix m(dim, dim);
        for (int i = 0; i < dim; ++i) {
            if (re[i].size() != static_cast<std::size_t>(dim) || im[i].size() != static_cast<std::size_t>(dim))
                throw Error(ErrorKind::ConfigError, "matrix file columns do not match dim");
            for (int j = 0; j < dim; ++j) m(i, j) = cplx(re[i][j], im[i][j]);
        }
        return m;
    } catch (const json::exception &e) {
        throw Error(ErrorKind::ConfigError, path.string() + ": " + e.what());
    }
}

void save_matrix(const std::filesystem::path &path, const OperatorMatrix &m) {
    json re = json::array(), im = json::array();
    for (Eigen::Index i = 0; i < m.rows(); ++i) {
        json r = json::array(), c = json::array();
        for (Eigen::Index j = 0; j < m.cols(); ++j) {
            r.push_back(m(i, j).real());
            c.push_back(m(i, j).imag());
        }
        re.push_back(r);
        im.push_back(c);
    }
    auto out = open_output(path);
    out << json{{"dim", m.rows()}, {"real", re}, {"imag", im}}.dump() << '\n';
}

void write_manifest(const ExperimentConfig &cfg, const std::string &name, const RunReport &report) {
    std::filesystem::create_directories(cfg.output);
    json doc = {{"command", name},         {"config", cfg.to_json()},           {"cache_keys", report.cache_keys},
                {"warnings", report.warnings}, {"failures", report.failures}, {"outputs", report.outputs}};
    auto out = open_output(std::filesystem::path(cfg.output) / (name + "_manifest.json"));
    out << doc.dump(2) << '\n';
}

} // namespace nhsim
