// vlaconv: command-line front end for the convolution lab.
//
//   vlaconv validate   [--seed N] [--quick]
//   vlaconv run        --cfg PATH [--vlen BITS] [--l2-mb N] [--mode M] ...
//   vlaconv sweep      --cfg PATH [--vlen B,B,...] [--l2-mb N,N,...] ...
//   vlaconv roofline   --cfg PATH [--vlen BITS] [--l2-mb N] [--mode M] ...
//   vlaconv microbench [--vlen BITS] [--iterations N]
//
// Exit status: 0 success, 1 validation failure, 2 usage or configuration error.

#include <cstdio>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "json.hpp"
#include "vlaconv/bench.hpp"

namespace {

using namespace vlaconv;

struct Options {
  std::string cfg;
  std::size_t layers = 0;
  std::vector<std::size_t> vlens;
  std::vector<std::size_t> l2_mib;
  RunMode mode = RunMode::hybrid;
  ReplicateStrategy replicate = ReplicateStrategy::slide;
  TransposeStrategy transpose = TransposeStrategy::strided;
  std::uint64_t seed = 1;
  std::string out;
  std::string calibration;
  std::string json;
  std::string plot_data;
  std::size_t iterations = 100;
  std::size_t conv_layers = 10;
  std::size_t max_rows = 20000;
  std::size_t min_channels = 4;
  bool force = false;
  bool quick = false;
  bool inject_fault = false;
};

const std::map<std::string, RunMode> kModes = {
    {"pure", RunMode::pure}, {"hybrid", RunMode::hybrid}, {"winograd-all", RunMode::winograd_all}};
const std::map<std::string, ReplicateStrategy> kReplicate = {{"indexed", ReplicateStrategy::indexed},
                                                             {"slide", ReplicateStrategy::slide}};
const std::map<std::string, TransposeStrategy> kTranspose = {{"indexed", TransposeStrategy::indexed},
                                                             {"strided", TransposeStrategy::strided}};

struct Calibration {
  CacheConfig cache;
  CostModel cost;
};

Calibration load_calibration(const Options& o) {
  Calibration mc;
  if (o.calibration.empty()) return mc;
  std::ifstream f(o.calibration);
  if (!f) throw ConfigError("cannot open calibration file '" + o.calibration + "'");
  std::stringstream ss;
  ss << f.rdbuf();
  apply_machine_config(parse_key_values(ss.str()), mc.cache, mc.cost);
  return mc;
}

NetworkModel load_model(const Options& o) {
  NetworkModel model = load_cfg(o.cfg);
  for (const auto& w : model.warnings) std::cerr << "warning: " << w << '\n';
  if (o.layers) model = model.truncated(o.layers);
  return model;
}

SweepSpec make_spec(const Options& o) {
  SweepSpec spec;
  if (!o.vlens.empty()) spec.vlens = o.vlens;
  if (!o.l2_mib.empty()) spec.l2_mib = o.l2_mib;
  spec.mode = o.mode;
  spec.strategy = {o.replicate, o.transpose};
  spec.policy.min_channels = o.min_channels;
  spec.seed = o.seed;
  spec.max_rows = o.max_rows;
  spec.force = o.force;
  return spec;
}

/// Opens --out, or standard output when it is empty or "-".
class Output {
 public:
  explicit Output(const std::string& path) {
    if (!path.empty() && path != "-") {
      file_.open(path);
      if (!file_) throw ConfigError("cannot write '" + path + "'");
    }
  }
  std::ostream& stream() { return file_.is_open() ? static_cast<std::ostream&>(file_) : std::cout; }

 private:
  std::ofstream file_;
};

nlohmann::json stats_json(const ExecStats& s) {
  nlohmann::json j;
  for (std::size_t i = 0; i < kOpClassCount; ++i)
    j["instructions"][to_string(static_cast<OpClass>(i))] = s.instructions[i];
  j["flops"] = s.flops;
  j["l1_accesses"] = s.l1_accesses;
  j["l1_misses"] = s.l1_misses;
  j["l2_accesses"] = s.l2_accesses;
  j["l2_misses"] = s.l2_misses;
  j["l2_writebacks"] = s.l2_writebacks;
  j["dram_bytes"] = s.dram_bytes();
  j["cycles"] = s.cycles;
  j["seconds"] = s.modeled_seconds();
  j["l2_miss_rate"] = s.l2_miss_rate();
  return j;
}

int cmd_validate(const Options& o) {
  ValidateOptions vo;
  vo.seed = o.seed;
  vo.quick = o.quick;
  const WinogradMatrices bad = corrupted_matrices();
  if (o.inject_fault) vo.matrices = &bad;
  const auto checks = run_validation(vo);
  write_validation_report(std::cout, checks);
  return all_passed(checks) ? 0 : 1;
}

int cmd_run(const Options& o) {
  const Calibration mc = load_calibration(o);
  const NetworkModel model = load_model(o);
  SweepSpec spec = make_spec(o);
  if (o.vlens.size() > 1 || o.l2_mib.size() > 1) throw ArgumentError("run takes one --vlen and one --l2-mb");
  spec.vlens = {o.vlens.empty() ? std::size_t{512} : o.vlens[0]};
  spec.l2_mib = {o.l2_mib.empty() ? mc.cache.l2_bytes / kMiB : o.l2_mib[0]};
  if (spec.l2_mib[0] == 0) throw ArgumentError("L2 size must be at least 1 MiB");
  spec.validate();
  const RunConfig rc = sweep_point_config(spec, spec.vlens[0], mc.cache, mc.cost);
  const InferenceResult res = run_network_inference(model, rc);

  std::printf("%-5s %-14s %-12s %14s %14s %12s %8s\n", "layer", "type", "algorithm", "cycles", "flops",
              "dram_bytes", "l2_miss");
  for (std::size_t i = 0; i < res.layers.size(); ++i) {
    const auto& lr = res.layers[i];
    const ExecStats& s = lr.stats[0];
    std::printf("%-5zu %-14s %-12s %14llu %14llu %12llu %8.4f\n", lr.index, model.layers[i].type.c_str(),
                to_string(lr.algorithm), static_cast<unsigned long long>(s.cycles),
                static_cast<unsigned long long>(s.flops), static_cast<unsigned long long>(s.dram_bytes()),
                s.l2_miss_rate());
  }
  std::cout << "network=" << model.name << "\nmode=" << to_string(spec.mode) << "\nvlen=" << spec.vlens[0]
            << "\nl2_mib=" << spec.l2_mib[0] << "\nreplicate=" << to_string(spec.strategy.replicate)
            << "\ntranspose=" << to_string(spec.strategy.transpose) << "\nseed=" << spec.seed << '\n';
  write_stats_report(std::cout, res.totals[0], "total.");

  if (!o.out.empty()) {
    Output out(o.out);
    write_csv_header(out.stream());
    RowKey key{model.name, spec.mode, spec.strategy, spec.vlens[0], spec.l2_mib[0], {}, {}, {}};
    for (std::size_t i = 0; i < res.layers.size(); ++i) {
      key.layer = std::to_string(res.layers[i].index);
      key.type = model.layers[i].type;
      key.algorithm = to_string(res.layers[i].algorithm);
      write_csv_row(out.stream(), key, res.layers[i].stats[0]);
    }
    key.layer = "total";
    key.type = "network";
    key.algorithm = "-";
    write_csv_row(out.stream(), key, res.totals[0]);
  }
  if (!o.json.empty()) {
    nlohmann::json j;
    j["network"] = model.name;
    j["mode"] = to_string(spec.mode);
    j["vlen"] = spec.vlens[0];
    j["l2_mib"] = spec.l2_mib[0];
    j["seed"] = spec.seed;
    for (std::size_t i = 0; i < res.layers.size(); ++i) {
      nlohmann::json l = stats_json(res.layers[i].stats[0]);
      l["index"] = res.layers[i].index;
      l["type"] = model.layers[i].type;
      l["algorithm"] = to_string(res.layers[i].algorithm);
      j["layers"].push_back(l);
    }
    j["total"] = stats_json(res.totals[0]);
    Output out(o.json);
    out.stream() << j.dump(2) << '\n';
  }
  return 0;
}

int cmd_sweep(const Options& o) {
  const Calibration mc = load_calibration(o);
  const NetworkModel model = load_model(o);
  const SweepSpec spec = make_spec(o);
  spec.validate();
  const std::size_t rows = sweep_row_count(model, spec);
  if (rows > spec.max_rows && !spec.force)
    throw ArgumentError("sweep would emit " + std::to_string(rows) + " rows (cap " +
                        std::to_string(spec.max_rows) + "); pass --force to run it anyway");
  Output out(o.out);
  const auto totals = run_sweep(out.stream(), model, spec, mc.cache, mc.cost);
  if (!o.out.empty() && o.out != "-") {
    for (const auto& t : totals)
      std::cout << "vlen=" << t.vlen << " l2_mib=" << t.l2_mib << " cycles=" << t.stats.cycles
                << " l2_miss_rate=" << format_fixed(t.stats.l2_miss_rate(), 6) << '\n';
  }
  return 0;
}

int cmd_roofline(const Options& o) {
  const Calibration mc = load_calibration(o);
  const NetworkModel model = load_model(o);
  if (o.vlens.size() > 1 || o.l2_mib.size() > 1) throw ArgumentError("roofline takes one --vlen and one --l2-mb");
  const std::size_t vlen = o.vlens.empty() ? 512 : o.vlens[0];
  const std::size_t l2 = o.l2_mib.empty() ? 1 : o.l2_mib[0];
  const RooflineReport rep = roofline_report(model, o.mode, vlen, l2, {o.replicate, o.transpose}, o.seed,
                                             o.conv_layers, mc.cache, mc.cost);
  Output out(o.out);
  write_roofline_csv(out.stream(), rep);
  if (!o.plot_data.empty()) {
    Output plot(o.plot_data);
    write_roofline_plot_data(plot.stream(), rep);
  }
  if (!o.out.empty() && o.out != "-")
    std::cout << "layers=" << rep.points.size() << "\nmemory_bound=" << rep.memory_bound_count()
              << "\nridge=" << format_fixed(rep.ridge, 6) << '\n';
  return 0;
}

int cmd_microbench(const Options& o) {
  const Calibration mc = load_calibration(o);
  if (o.vlens.size() > 1) throw ArgumentError("microbench takes one --vlen");
  const std::size_t vlen = o.vlens.empty() ? 512 : o.vlens[0];
  VectorMachineConfig{vlen}.validate();
  const MicrobenchResult r = microbench_tuple(vlen, o.iterations, o.seed, microbench_shape(), mc.cache, mc.cost);
  write_microbench_report(std::cout, r);
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Vector-length-agnostic convolution lab"};
  app.require_subcommand(1);
  Options o;

  auto common = [&](CLI::App* sub, bool network) {
    if (network) {
      sub->add_option("--cfg", o.cfg, "Darknet-style network description")->required()->check(CLI::ExistingFile);
      sub->add_option("--layers", o.layers, "Only the first N layers");
      sub->add_option("--mode", o.mode, "pure | hybrid | winograd-all")
          ->transform(CLI::CheckedTransformer(kModes, CLI::ignore_case));
      sub->add_option("--transpose", o.transpose, "indexed | strided")
          ->transform(CLI::CheckedTransformer(kTranspose, CLI::ignore_case));
      sub->add_option("--l2-mb", o.l2_mib, "L2 size(s) in MiB")->delimiter(',');
      sub->add_option("--min-channels", o.min_channels, "Winograd dispatch channel threshold");
    }
    sub->add_option("--vlen", o.vlens, "Vector length(s) in bits")->delimiter(',');
    sub->add_option("--replicate", o.replicate, "indexed | slide")
        ->transform(CLI::CheckedTransformer(kReplicate, CLI::ignore_case));
    sub->add_option("--seed", o.seed, "Seed for inputs and weights");
    sub->add_option("--calibration", o.calibration, "key=value cache / cost model overrides");
  };

  CLI::App* validate = app.add_subcommand("validate", "Run the oracle and strategy equivalence checks");
  validate->add_option("--seed", o.seed, "Seed");
  validate->add_flag("--quick", o.quick, "Small shapes only");
  validate->add_flag("--inject-fault", o.inject_fault, "Corrupt the input transform matrix (self-test)");

  CLI::App* run = app.add_subcommand("run", "One inference; per-layer table and totals");
  common(run, true);
  run->add_option("--out", o.out, "Also write the rows as CSV");
  run->add_option("--json", o.json, "Also write a JSON report");

  CLI::App* sweep = app.add_subcommand("sweep", "Vector length x L2 size grid as CSV");
  common(sweep, true);
  sweep->add_option("--out", o.out, "CSV path (default: standard output)");
  sweep->add_option("--max-rows", o.max_rows, "Refuse larger grids unless --force");
  sweep->add_flag("--force", o.force, "Run grids above --max-rows");

  CLI::App* roof = app.add_subcommand("roofline", "Roofline points of the first convolutional layers");
  common(roof, true);
  roof->add_option("--conv-layers", o.conv_layers, "Number of convolutional layers (default 10)");
  roof->add_option("--out", o.out, "CSV path (default: standard output)");
  roof->add_option("--plot-data", o.plot_data, "gnuplot data file");

  CLI::App* micro = app.add_subcommand("microbench", "Tuple multiplication: indexed vs slide replication");
  common(micro, false);
  micro->add_option("--iterations", o.iterations, "Repetitions per strategy (default 100)");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? 0 : 2;
  }

  try {
    if (*validate) return cmd_validate(o);
    if (*run) return cmd_run(o);
    if (*sweep) return cmd_sweep(o);
    if (*roof) return cmd_roofline(o);
    if (*micro) return cmd_microbench(o);
  } catch (const vlaconv::Error& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 2;
  }
  return 2;
}
