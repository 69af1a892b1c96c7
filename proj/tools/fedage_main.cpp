// fedage command-line interface.
//
// Pipeline subcommands (generate-data, train, evaluate, stats, report) each
// read an experiment config JSON and write into its output directory.
// serve-server / serve-client expose the TCP federation roles so a federated
// run can span processes or machines.
#include <charconv>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <json.hpp>

#include "fedage/error.hpp"
#include "fedage/harness.hpp"
#include "fedage/tcp.hpp"

namespace {

namespace fs = std::filesystem;
using fedage::harness::ExperimentConfig;

struct CommonArgs {
  std::string config_path;
  std::string out_dir;
  std::vector<std::uint64_t> seeds;
  std::string family;
  std::string configuration;
};

void add_common(CLI::App* cmd, CommonArgs& args) {
  cmd->add_option("--config", args.config_path, "experiment config JSON")
      ->required();
  cmd->add_option("--out", args.out_dir, "output directory (overrides config)");
  cmd->add_option("--seed", args.seeds, "run seed(s) (overrides config)");
  cmd->add_option("--family", args.family, "restrict to one model family");
  cmd->add_option("--configuration", args.configuration,
                  "restrict to one training configuration");
}

ExperimentConfig load_config(const CommonArgs& args) {
  auto cfg = ExperimentConfig::from_json_file(args.config_path);
  if (!args.out_dir.empty()) cfg.out_dir = args.out_dir;
  if (!args.seeds.empty()) cfg.seeds = args.seeds;
  if (!args.family.empty())
    cfg.families = {fedage::harness::parse_family(args.family)};
  if (!args.configuration.empty())
    cfg.topologies = {fedage::harness::parse_topology(args.configuration)};
  cfg.validate();
  return cfg;
}

std::pair<std::string, int> parse_endpoint(const std::string& endpoint) {
  const auto colon = endpoint.rfind(':');
  if (colon == std::string::npos)
    throw fedage::ConfigError("endpoint must be host:port, got " + endpoint);
  const std::string host = endpoint.substr(0, colon);
  const std::string port_str = endpoint.substr(colon + 1);
  int port = 0;
  const auto res =
      std::from_chars(port_str.data(), port_str.data() + port_str.size(), port);
  if (res.ec != std::errc{} || port < 0 || port > 65535)
    throw fedage::ConfigError("bad port in endpoint " + endpoint);
  return {host, port};
}

void write_model_json(const fedage::model::ModelParams& params,
                      const fs::path& path) {
  nlohmann::json shapes = nlohmann::json::array();
  for (const auto& [in, out] : params.layer_shapes)
    shapes.push_back(nlohmann::json::array({in, out}));
  const nlohmann::json j = {{"weights", params.weights},
                            {"intercept", params.intercept},
                            {"shapes", shapes}};
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fedage::Error("cannot open " + path.string());
  out << j.dump() << '\n';
}

void write_history_csv(const std::vector<fedage::fed::RoundRecord>& history,
                       const fs::path& path) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw fedage::Error("cannot open " + path.string());
  out << "round,client_id,n_samples,update_norm,aggregate_checksum\n";
  for (const auto& rec : history)
    for (const auto& c : rec.clients) {
      char norm[32];
      const auto res = std::to_chars(norm, norm + sizeof(norm), c.update_norm);
      out << rec.round_index << ',' << c.client_id << ',' << c.n_samples << ','
          << std::string(norm, res.ptr) << ',' << std::hex
          << rec.aggregate_checksum << std::dec << '\n';
    }
}

int run_serve_server(const CommonArgs& common, const std::string& listen,
                     bool inproc) {
  const auto cfg = load_config(common);
  const auto family = cfg.families.front();
  const std::uint64_t seed = cfg.seeds.front();

  const auto cohort = fedage::harness::cohort_for_run(cfg, seed);
  const auto plan =
      fedage::harness::single_federation_plan(cohort, family, cfg, seed);
  fs::create_directories(cfg.out_dir);

  fedage::fed::FederationResult result;
  if (inproc) {
    // Local dry run of the same plan: produces the artifacts the TCP path
    // must reproduce bit-for-bit.
    result = fedage::fed::run_federation(plan);
  } else {
    const auto [host, port] = parse_endpoint(listen);
    fedage::fed::TcpOptions opts;
    opts.host = host;
    opts.port = port;
    opts.timeout_seconds = cfg.tcp_timeout_seconds;
    fedage::fed::TcpServerTransport transport(plan.roster(), opts);
    {
      std::ofstream port_file(fs::path(cfg.out_dir) / "server_port.txt");
      port_file << transport.port() << '\n';
    }
    std::cerr << "serve-server: listening on " << host << ":"
              << transport.port() << ", waiting for " << plan.clients.size()
              << " clients\n";
    transport.wait_for_clients();
    result = fedage::fed::run_federation(plan, transport);
  }

  const std::string tag = fedage::harness::to_string(family) + "_seed" +
                          std::to_string(seed);
  write_model_json(result.params,
                   fs::path(cfg.out_dir) / ("model_" + tag + ".json"));
  write_history_csv(result.history,
                    fs::path(cfg.out_dir) / ("federation_rounds_" + tag + ".csv"));
  std::cerr << "serve-server: " << result.history.size() << " rounds done\n";
  return 0;
}

int run_serve_client(const CommonArgs& common, const std::string& connect,
                     int center_id) {
  const auto cfg = load_config(common);
  const auto [host, port] = parse_endpoint(connect);
  const auto family = cfg.families.front();
  const std::uint64_t seed = cfg.seeds.front();

  const auto cohort = fedage::harness::cohort_for_run(cfg, seed);
  const auto plan =
      fedage::harness::single_federation_plan(cohort, family, cfg, seed);
  for (const auto& client : plan.clients)
    if (client.client_id == center_id) {
      fedage::fed::run_federation_client(client, plan.train_cfg,
                                         plan.model_kind, plan.feedforward,
                                         plan.rounds, host, port,
                                         cfg.tcp_timeout_seconds);
      return 0;
    }
  throw fedage::ConfigError("center " + std::to_string(center_id) +
                            " not present in the cohort");
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Federated brain-age modeling sandbox"};
  app.require_subcommand(1);

  CommonArgs common;
  std::string transport = "inproc";
  std::string listen = "127.0.0.1:0";
  std::string connect;
  int center_id = -1;

  auto* generate = app.add_subcommand("generate-data",
                                      "write a synthetic cohort and summaries");
  add_common(generate, common);

  auto* train = app.add_subcommand("train", "run the training protocol");
  add_common(train, common);
  train->add_option("--transport", transport,
                    "federated transport (inproc; TCP runs use serve-*)");

  auto* evaluate =
      app.add_subcommand("evaluate", "fill bias-corrected BrainAGE");
  add_common(evaluate, common);

  auto* stats_cmd = app.add_subcommand("stats", "run the statistical battery");
  add_common(stats_cmd, common);

  auto* report = app.add_subcommand("report", "render the Markdown report");
  add_common(report, common);

  auto* serve_server =
      app.add_subcommand("serve-server", "drive a federation over TCP");
  add_common(serve_server, common);
  serve_server->add_option("--listen", listen, "host:port (port 0 = ephemeral)");
  bool serve_inproc = false;
  serve_server->add_flag("--inproc", serve_inproc,
                         "run the same plan in-process (no sockets)");

  auto* serve_client =
      app.add_subcommand("serve-client", "serve one center over TCP");
  add_common(serve_client, common);
  serve_client->add_option("--connect", connect, "server host:port")->required();
  serve_client->add_option("--center-id", center_id, "center to serve")
      ->required();

  CLI11_PARSE(app, argc, argv);

  try {
    if (generate->parsed()) {
      fedage::harness::stage_generate_data(load_config(common));
    } else if (train->parsed()) {
      if (transport != "inproc")
        throw fedage::ConfigError(
            "train runs federations in-process; use serve-server/serve-client "
            "for TCP");
      fedage::harness::stage_train(load_config(common));
    } else if (evaluate->parsed()) {
      fedage::harness::stage_evaluate(load_config(common));
    } else if (stats_cmd->parsed()) {
      fedage::harness::stage_stats(load_config(common));
    } else if (report->parsed()) {
      fedage::harness::stage_report(load_config(common));
    } else if (serve_server->parsed()) {
      return run_serve_server(common, listen, serve_inproc);
    } else if (serve_client->parsed()) {
      return run_serve_client(common, connect, center_id);
    }
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << '\n';
    return 1;
  }
  return 0;
}
