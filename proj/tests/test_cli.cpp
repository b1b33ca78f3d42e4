// End-to-end checks of the installed binary: generate -> train -> eval, rerun
// determinism, flag precedence, and error exits.  Needs SDM_CLI_BIN (set by
// the ctest harness); skips when run without it.

#include <catch2/catch_amalgamated.hpp>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>
#include <string>

#include <sys/wait.h>

#include <json.hpp>

#include "sdm/commands.hpp"

using nlohmann::json;

namespace {

std::string cli_path() {
    const char* p = std::getenv("SDM_CLI_BIN");
    return p == nullptr ? std::string() : std::string(p);
}

struct TempDir {
    std::filesystem::path path;
    explicit TempDir(const std::string& tag) {
        path = std::filesystem::temp_directory_path() /
               ("sdm_cli_" + tag + "_" + std::to_string(::getpid()));
        std::filesystem::remove_all(path);
        std::filesystem::create_directories(path);
    }
    ~TempDir() { std::filesystem::remove_all(path); }
    std::string file(const std::string& name) const { return (path / name).string(); }
};

int run_cli(const std::string& args, const std::string& log_path) {
    const std::string cmd = cli_path() + " " + args + " >" + log_path + " 2>&1";
    const int status = std::system(cmd.c_str());
    REQUIRE(WIFEXITED(status));
    return WEXITSTATUS(status);
}

std::string slurp(const std::string& path) {
    std::ifstream in(path, std::ios::binary);
    REQUIRE(in.good());
    std::ostringstream os;
    os << in.rdbuf();
    return os.str();
}

json slurp_json(const std::string& path) { return json::parse(slurp(path)); }

// Small enough to finish the whole pipeline in a few seconds.
json tiny_run_config() {
    sdm::RunConfig cfg;
    cfg.seed = 1;
    cfg.hypergraph.n = 24;
    cfg.hypergraph.m = 10;
    cfg.cascade_count = 10;
    cfg.cascade.coverage_targets = {0.2, 0.3, 0.4};
    cfg.model.pe_width = 3;
    cfg.model.hgnn_width = 6;
    cfg.model.blocks = 1;
    cfg.model.d_state = 2;
    cfg.model.edge_head_hidden = 4;
    cfg.model.epochs = 5;
    cfg.model.patience = 3;
    cfg.model.batch_size = 4;
    cfg.model.val_fraction = 0.25;
    return sdm::run_config_to_json(cfg);
}

}  // namespace

TEST_CASE("cli pipeline: generate, train, eval") {
    if (cli_path().empty()) SKIP("SDM_CLI_BIN not set");
    TempDir dir("pipeline");
    const std::string cfg_path = dir.file("run.json");
    sdm::atomic_write_text(cfg_path, tiny_run_config().dump(2) + "\n");
    const std::string log = dir.file("log.txt");

    const std::string data = dir.file("data");
    REQUIRE(run_cli("generate --config " + cfg_path + " --seed 9 --out " + data, log) == 0);
    CHECK(std::filesystem::exists(data + "/manifest.json"));
    CHECK(std::filesystem::exists(data + "/hypergraph.txt"));
    CHECK(std::filesystem::exists(data + "/cascades/cascade_0000.json"));
    CHECK(std::filesystem::exists(data + "/cascades/cascade_0009.json"));
    // resolved config records the flag override, not the file value
    CHECK(slurp_json(data + "/config.json").at("seed") == 9);

    const std::string run = dir.file("run1");
    REQUIRE(run_cli("train --config " + cfg_path + " --seed 9 --data " + data + " --out " + run,
                    log) == 0);
    CHECK(std::filesystem::exists(run + "/checkpoint.json"));
    const std::string train_log = slurp(run + "/train_log.csv");
    CHECK(train_log.rfind("epoch,train_loss,val_f_score\n", 0) == 0);

    const json ckpt = slurp_json(run + "/checkpoint.json");
    CHECK(ckpt.at("format") == "sdm-ckpt-v1");
    CHECK(ckpt.at("config").at("nodes") == 24);

    const std::string eval1 = dir.file("eval1");
    REQUIRE(run_cli("eval --config " + cfg_path + " --seed 9 --data " + data + " --ckpt " + run +
                        "/checkpoint.json --out " + eval1 + " --baseline",
                    log) == 0);
    const json agg = slurp_json(eval1 + "/aggregate.json");
    CHECK(agg.at("format") == "sdm-report-v1");
    CHECK(agg.at("baseline").is_object());
    CHECK(agg.at("model").at("mean").at("f_score").is_number());
    const std::string csv = slurp(eval1 + "/per_cascade.csv");
    CHECK(csv.find("baseline_f_score") != std::string::npos);

    SECTION("rerun reproduces every artifact except wall-clock fields") {
        const std::string run2 = dir.file("run2");
        REQUIRE(run_cli("train --config " + cfg_path + " --seed 9 --data " + data + " --out " +
                            run2,
                        log) == 0);
        CHECK(slurp(run2 + "/checkpoint.json") == slurp(run + "/checkpoint.json"));
        CHECK(slurp(run2 + "/train_log.csv") == slurp(run + "/train_log.csv"));

        const std::string eval2 = dir.file("eval2");
        REQUIRE(run_cli("eval --config " + cfg_path + " --seed 9 --data " + data + " --ckpt " +
                            run2 + "/checkpoint.json --out " + eval2 + " --baseline",
                        log) == 0);
        CHECK(slurp(eval2 + "/per_cascade.csv") == slurp(eval1 + "/per_cascade.csv"));
        json a = slurp_json(eval1 + "/aggregate.json");
        json b = slurp_json(eval2 + "/aggregate.json");
        a.erase("runtime_seconds");
        b.erase("runtime_seconds");
        CHECK(a == b);
    }
}

TEST_CASE("cli rejects bad invocations with nonzero exit") {
    if (cli_path().empty()) SKIP("SDM_CLI_BIN not set");
    TempDir dir("errors");
    const std::string log = dir.file("log.txt");

    CHECK(run_cli("", log) != 0);                        // subcommand required
    CHECK(run_cli("generate --bogus 1", log) != 0);      // unknown flag
    CHECK(run_cli("generate", log) != 0);                // --out missing
    CHECK(run_cli("train --out " + dir.file("x"), log) != 0);  // --data missing
    CHECK(run_cli("eval --data d --out o", log) != 0);   // --ckpt missing
    CHECK(run_cli("train --data " + dir.file("nowhere") + " --out " + dir.file("o"), log) != 0);
    CHECK(slurp(log).find("error:") != std::string::npos);

    const std::string bad_cfg = dir.file("bad.json");
    sdm::atomic_write_text(bad_cfg, "{\"verbose\": true}\n");
    CHECK(run_cli("generate --config " + bad_cfg + " --out " + dir.file("o2"), log) != 0);
    CHECK(slurp(log).find("verbose") != std::string::npos);
}
