// gex: command line front end for training runs and run summaries.
//
//   gex train --env rooms --seed 3 --out runs/rooms-3
//   gex summarize runs/scroller-1
//   gex report runs/*
//   gex config --profile paper

#include <cstdio>
#include <iostream>

#include "CLI11.hpp"
#include "gex/harness/harness.hpp"

using namespace gex;
namespace fs = std::filesystem;

namespace {

int train(const std::string& config_path, std::map<std::string, std::string> overrides,
          const std::vector<std::string>& sets, bool quiet) {
  for (const auto& s : sets) {
    const auto eq = s.find('=');
    if (eq == std::string::npos || eq == 0) {
      throw harness::ValueTypeError("--set expects key=value, got '" + s + "'");
    }
    overrides[s.substr(0, eq)] = s.substr(eq + 1);
  }
  const harness::ExperimentConfig cfg = config_path.empty()
                                            ? harness::parse_config("", overrides)
                                            : harness::parse_config_file(config_path, overrides);
  harness::Callbacks cb;
  if (!quiet) {
    cb.on_row = [&](const harness::MetricsRow& r) {
      if (r.frame % 10000 != 0 && r.frame != cfg.frames) return;
      std::printf("frame %8lld  episodes %6lld  return %8s  furthest_x %4lld  rooms %lld  phases %lld\n",
                  static_cast<long long>(r.frame), static_cast<long long>(r.episodes),
                  r.mean_return ? std::to_string(*r.mean_return).substr(0, 8).c_str() : "-",
                  static_cast<long long>(r.furthest_x), static_cast<long long>(r.rooms_visited),
                  static_cast<long long>(r.girm_phases));
      std::fflush(stdout);
    };
  }
  const auto res = harness::run_experiment(cfg, cb);
  std::printf("%s: %lld frames, %lld episodes, %lld GIRM phases, furthest x %lld, %.1f s\n",
              res.ok ? "done" : "aborted", static_cast<long long>(res.frames),
              static_cast<long long>(res.episodes), static_cast<long long>(res.girm_phases),
              static_cast<long long>(res.furthest_x), res.seconds);
  if (!res.ok) {
    std::fprintf(stderr, "gex: %s\n", res.error.c_str());
    return 3;
  }
  return 0;
}

int summarize(const fs::path& run_dir) {
  const auto cfg = harness::parse_config_file(run_dir / "config.txt");
  const auto recs = harness::read_trajectory(run_dir / "trajectory.bin");
  std::vector<int32_t> xs;
  xs.reserve(recs.size());
  for (const auto& r : recs) xs.push_back(r.x);
  std::cout << harness::format_exploration(harness::summarize_exploration(xs, cfg.env.length));
  return 0;
}

int report(const std::vector<std::string>& dirs) {
  if (dirs.size() == 1) {
    std::cout << harness::emit_summary(dirs[0]).text;
    return 0;
  }
  bool header = false;
  for (const auto& d : dirs) {
    const auto r = harness::emit_summary(d);
    if (!header) std::cout << r.csv_header << "\n";
    header = true;
    std::cout << r.csv_row << "\n";
  }
  return 0;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"GAN-based intrinsic reward experiments"};
  app.require_subcommand(1);

  auto* tr = app.add_subcommand("train", "run one training experiment");
  std::string config_path, env, girm, profile, out;
  uint64_t seed = 0;
  int64_t frames = 0;
  bool log_traj = false, dump_levels = false, quiet = false;
  std::vector<std::string> sets;
  tr->add_option("--config", config_path, "key = value config file")->check(CLI::ExistingFile);
  tr->add_option("--env", env, "scroller or rooms");
  tr->add_option("--seed", seed, "experiment seed");
  tr->add_option("--frames", frames, "frame budget");
  tr->add_option("--girm", girm, "on or off");
  tr->add_option("--profile", profile, "small or paper");
  tr->add_option("--out", out, "run directory");
  tr->add_flag("--log-trajectory", log_traj, "write trajectory.bin");
  tr->add_flag("--dump-levels", dump_levels, "write level.txt");
  tr->add_option("--set", sets, "override any config key, key=value")->take_all();
  tr->add_flag("-q,--quiet", quiet, "no progress lines");

  auto* su = app.add_subcommand("summarize", "exploration summary from a run's trajectory log");
  std::string sum_dir;
  su->add_option("run_dir", sum_dir, "run directory")->required()->check(CLI::ExistingDirectory);

  auto* re = app.add_subcommand("report", "write report.txt/report.csv for run directories");
  std::vector<std::string> rep_dirs;
  re->add_option("run_dirs", rep_dirs, "run directories")->required()->check(CLI::ExistingDirectory);

  auto* co = app.add_subcommand("config", "print the effective configuration");
  std::string co_file, co_profile;
  std::vector<std::string> co_sets;
  co->add_option("--config", co_file, "key = value config file")->check(CLI::ExistingFile);
  co->add_option("--profile", co_profile, "small or paper");
  co->add_option("--set", co_sets, "override any config key, key=value")->take_all();

  CLI11_PARSE(app, argc, argv);

  try {
    if (*tr) {
      std::map<std::string, std::string> o;
      if (!env.empty()) o["env"] = env;
      if (tr->count("--seed")) o["seed"] = std::to_string(seed);
      if (tr->count("--frames")) o["frames"] = std::to_string(frames);
      if (!girm.empty()) o["girm"] = girm;
      if (!profile.empty()) o["profile"] = profile;
      if (!out.empty()) o["out"] = out;
      if (log_traj) o["log_trajectory"] = "on";
      if (dump_levels) o["dump_levels"] = "on";
      return train(config_path, o, sets, quiet);
    }
    if (*co) {
      std::map<std::string, std::string> o;
      if (!co_profile.empty()) o["profile"] = co_profile;
      for (const auto& kv : co_sets) {
        const auto eq = kv.find('=');
        if (eq == std::string::npos || eq == 0) {
          throw harness::ValueTypeError("--set expects key=value, got '" + kv + "'");
        }
        o[kv.substr(0, eq)] = kv.substr(eq + 1);
      }
      const auto cfg = co_file.empty() ? harness::parse_config("", o) : harness::parse_config_file(co_file, o);
      std::cout << harness::emit_config(cfg);
      return 0;
    }
    if (*su) return summarize(sum_dir);
    if (*re) return report(rep_dirs);
  } catch (const harness::ConfigError& e) {
    std::fprintf(stderr, "gex: config error: %s\n", e.what());
    return 2;
  } catch (const std::exception& e) {
    std::fprintf(stderr, "gex: %s\n", e.what());
    return 1;
  }
  return 0;
}
