// tapsim: scenario runner, regression suite, keychain demo and trace checker.
//
// Exit codes: 0 success, 1 unexpected result, 2 configuration error.

#include <algorithm>
#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <iostream>

#include <CLI11.hpp>
#include <fmt/format.h>

#include "tap/counters.hpp"
#include "tap/error.hpp"
#include "tap/metrics.hpp"
#include "tap/scenario_io.hpp"
#include "tap/simulator.hpp"
#include "tap/ticket.hpp"
#include "tap/trace_checker.hpp"

namespace fs = std::filesystem;
using namespace tap;

namespace {

constexpr int kExitOk = 0;
constexpr int kExitUnexpected = 1;
constexpr int kExitConfig = 2;

fs::path fixture_dir() {
  if (const char* env = std::getenv("TAP_FIXTURE_DIR"); env && *env) return env;
  return TAP_DEFAULT_FIXTURE_DIR;
}

struct RunOptions {
  std::string file;
  std::optional<std::uint64_t> seed;
  std::optional<int> mode;
  bool restricted = false;
  bool json = false;
  std::string trace_out;
  std::string report_out;
};

int cmd_run(const RunOptions& o) {
  ScenarioConfig cfg;
  try {
    cfg = load_scenario(o.file);
    if (o.seed) cfg.seed = *o.seed;
    if (o.mode) {
      if (*o.mode < 1 || *o.mode > 3) throw Error(Errc::ConfigParse, "--mode must be 1, 2 or 3");
      cfg.mode = static_cast<RetrievalMode>(*o.mode);
    }
    if (o.restricted) cfg.restricted = true;
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kExitConfig;
  }
  RunResult result;
  try {
    result = run_scenario(cfg);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return e.code() == Errc::ConfigParse ? kExitConfig : kExitUnexpected;
  }
  const auto report = build_report(cfg, result);
  if (o.json) {
    std::cout << report_json(report).dump(2) << '\n';
  } else {
    std::cout << format_report(report);
  }
  if (!o.report_out.empty()) {
    std::ofstream out(o.report_out);
    out << report_json(report).dump(2) << '\n';
  }
  if (!o.trace_out.empty()) {
    std::ofstream out(o.trace_out);
    write_trace(out, result.trace);
  }
  return report.ok() ? kExitOk : kExitUnexpected;
}

int cmd_suite(const std::string& dir_arg) {
  const fs::path dir = dir_arg.empty() ? fixture_dir() : fs::path(dir_arg);
  std::vector<fs::path> files;
  std::error_code ec;
  for (const auto& entry : fs::directory_iterator(dir, ec)) {
    if (entry.path().extension() == ".scenario") files.push_back(entry.path());
  }
  if (ec || files.empty()) {
    std::cerr << "no scenarios in " << dir << '\n';
    return kExitConfig;
  }
  std::sort(files.begin(), files.end());
  int status = kExitOk;
  OpCounts total;
  for (const auto& f : files) {
    std::string line;
    try {
      const auto cfg = load_scenario(f);
      const auto result = run_scenario(cfg);
      const auto report = build_report(cfg, result);
      for (const auto& [id, o] : result.ops) total += o;
      line = fmt::format("{:<4} {:<28} {}", report.ok() ? "ok" : "FAIL", f.filename().string(),
                         to_string(report.verdict));
      for (const auto& c : report.checks) {
        if (!c.ok) line += fmt::format("\n       {}: {}", c.what, c.detail);
      }
      if (!report.ok()) status = std::max(status, kExitUnexpected);
    } catch (const Error& e) {
      line = fmt::format("{:<4} {:<28} {}", "ERR", f.filename().string(), e.what());
      status = e.code() == Errc::ConfigParse ? kExitConfig : std::max(status, kExitUnexpected);
    }
    std::cout << line << '\n';
  }
  std::cout << fmt::format("{} scenarios, online totals: hash {} xor {} seal {} open {} modexp {}\n", files.size(),
                           total.hash, total.xor_ops, total.seal, total.open, total.modexp);
  return status;
}

int cmd_keys_demo(std::uint32_t length) {
  SecretTable table;
  for (int i = 0; i < 4; ++i) {
    const auto d = digest_uncounted(Term::atom(fmt::format("demo-entry-{}", i)).encoding());
    Value32 v{};
    std::copy(d.bytes.begin(), d.bytes.end(), v.begin());
    table.entries.push_back(v);
  }
  KeyMsg msg;
  msg.index = 1;
  msg.offset = 2;
  msg.duration = 100ull * length;
  msg.length = length;
  const auto nd = digest_uncounted(Term::atom("demo-nonce").encoding());
  std::copy_n(nd.bytes.begin(), msg.nonce.size(), msg.nonce.begin());

  const auto chain = build_keychain(table, msg);
  const auto tree = build_index_tree(chain.index_vector());
  std::cout << fmt::format("Key_MSG  I={} O={} T_d={} L={} N0={}\n", msg.index, msg.offset, msg.duration, msg.length,
                           to_hex(msg.nonce));
  std::cout << fmt::format("lookup   {}\n", to_hex(lookup(table, msg.index, msg.offset)));
  for (std::size_t i = 0; i <= chain.length(); ++i) {
    std::cout << fmt::format("i={:<3} G={}\n      K={}\n      V={}\n", i, to_hex(chain.generators()[i].view()),
                             to_hex(chain.keys()[i].view()), to_hex(chain.index_vector()[i]));
  }
  std::cout << fmt::format("index tree: {} leaves, depth {}, head {}\n", tree.leaf_count(), tree.depth(),
                           to_hex(tree.head().view()));

  const Key group_key = Key::from(digest_uncounted(Term::atom("demo-group").encoding()).view(), KeyKind::Group);
  const Key customer_key = Key::from(digest_uncounted(Term::atom("demo-customer").encoding()).view(), KeyKind::Session);
  const std::size_t i = std::min<std::size_t>(2, chain.length() - 1);
  for (auto mode : {RetrievalMode::Mode1, RetrievalMode::Mode2, RetrievalMode::Mode3}) {
    TicketRequest req;
    req.mode = mode;
    req.customer = Term::id("C1");
    req.session = derive_session_key(chain.keys()[i], customer_key, static_cast<std::uint32_t>(i), chain.length());
    req.interval = i;
    req.index_value = chain.index_vector()[i];
    req.profile = Term::atom("standard");
    req.customer_key_digest = hash(customer_key.view());
    req.generator_digest = Digest::from(xor_combine(chain.keys()[i].view(), chain.nonce()));
    req.issued_at = static_cast<Seconds>(i) * chain.interval_len();
    req.tree = &tree;
    const auto ticket = issue_ticket(req, chain.keys()[i], group_key);
    auto est = DriftEstimator::initial(0, 0, static_cast<Seconds>(msg.duration), 0);
    OpCounts ops;
    VerifiedTicket vt;
    {
      counters::Scope scope(ops);
      vt = verify_ticket(ticket, chain, tree, group_key, est, *req.issued_at + 0.5);
    }
    std::cout << fmt::format("mode {}: ticket {} bytes, retrieved i={}, verify cost hash {} (retrieval {}) open {}\n",
                             static_cast<int>(mode), ticket.to_binary().size(), vt.index, ops.hash, ops.retrieval_hash,
                             ops.open);
  }
  return kExitOk;
}

int cmd_check(const std::string& file, const std::string& claimant, const std::string& partner) {
  std::ifstream in(file);
  if (!in) {
    std::cerr << "cannot open " << file << '\n';
    return kExitConfig;
  }
  Trace trace;
  try {
    trace = read_trace(in);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return kExitConfig;
  }
  const auto p = check_precedes(trace);
  std::cout << fmt::format("precedes {} ({} runs)", p.holds ? "holds" : "fails", p.runs_checked);
  if (p.witness) std::cout << fmt::format(", witness event {}", *p.witness);
  std::cout << '\n';
  bool all = p.holds;
  if (!claimant.empty() && !partner.empty()) {
    for (const auto& v : check_all_claims(trace, claimant, partner)) {
      std::cout << fmt::format("{} {} about {}: {} ({} runs)\n", to_string(v.claim.kind), claimant, partner,
                               v.holds ? "holds" : "fails", v.runs_checked);
      all = all && v.holds;
    }
  }
  return all ? kExitOk : kExitUnexpected;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"TAP protocol simulator"};
  app.require_subcommand(1);

  RunOptions run;
  auto* run_cmd = app.add_subcommand("run", "run one scenario and print its report");
  run_cmd->add_option("scenario", run.file, "scenario file")->required();
  run_cmd->add_option("--seed", run.seed, "override the scenario seed");
  run_cmd->add_option("--mode", run.mode, "override the retrieval mode (1, 2 or 3)");
  run_cmd->add_flag("--restricted", run.restricted, "one protocol instance per honest party");
  run_cmd->add_flag("--json", run.json, "print the JSON report instead of text");
  run_cmd->add_option("--trace", run.trace_out, "write the event trace to a file");
  run_cmd->add_option("--report", run.report_out, "write the JSON report to a file");

  std::string suite_dir;
  auto* suite_cmd = app.add_subcommand("suite", "run every scenario in the fixture directory");
  suite_cmd->add_option("--dir", suite_dir, "scenario directory (default: $TAP_FIXTURE_DIR)");

  std::uint32_t demo_length = 8;
  auto* keys_cmd = app.add_subcommand("keys", "keychain utilities");
  keys_cmd->require_subcommand(1);
  auto* demo_cmd = keys_cmd->add_subcommand("demo", "print a worked keychain");
  demo_cmd->add_option("--length", demo_length, "chain length L")->check(CLI::Range(2, 64));

  std::string check_file, claimant, partner;
  auto* check_cmd = app.add_subcommand("check", "check a recorded trace");
  check_cmd->add_option("trace", check_file, "trace file")->required();
  check_cmd->add_option("--claimant", claimant, "claimant for the claim suite");
  check_cmd->add_option("--partner", partner, "partner for the claim suite");

  try {
    app.parse(argc, argv);
  } catch (const CLI::ParseError& e) {
    const int rc = app.exit(e);
    return rc == 0 ? kExitOk : kExitConfig;
  }

  try {
    if (*run_cmd) return cmd_run(run);
    if (*suite_cmd) return cmd_suite(suite_dir);
    if (*demo_cmd) return cmd_keys_demo(demo_length);
    if (*check_cmd) return cmd_check(check_file, claimant, partner);
  } catch (const Error& e) {
    std::cerr << e.what() << '\n';
    return e.code() == Errc::ConfigParse ? kExitConfig : kExitUnexpected;
  }
  return kExitOk;
}
