#include <doctest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <string>

namespace {

namespace fs = std::filesystem;

int run(const std::string& args) {
    const std::string cmd =
        std::string(GQST_CLI_PATH) + " " + args + " >/dev/null 2>&1";
    const int status = std::system(cmd.c_str());
    return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
}

struct TempDir {
    fs::path path;
    TempDir() {
        path = fs::temp_directory_path() / "gqst_cli_test";
        fs::create_directories(path);
    }
    ~TempDir() {
        std::error_code ec;
        fs::remove_all(path, ec);
    }
};

}  // namespace

TEST_CASE("cli end-to-end: generate, estimate, bootstrap, select") {
    TempDir dir;
    const std::string data = (dir.path / "d.gqst").string();
    CHECK(run("generate --count 20 --points 1024 --seed 5 --out " + data) == 0);
    CHECK(fs::exists(data));
    CHECK(fs::exists(data + ".config"));

    const std::string report = (dir.path / "report.json").string();
    CHECK(run("estimate --in " + data +
              " --index 2 --method direct --bins 16 --out " + report) == 0);
    std::ifstream f(report);
    std::string body((std::istreambuf_iterator<char>(f)),
                     std::istreambuf_iterator<char>());
    CHECK(body.find("\"purity\"") != std::string::npos);
    CHECK(body.find("\"SQ_db\"") != std::string::npos);

    const std::string boot = (dir.path / "boot").string();
    CHECK(run("bootstrap --record-points 40000 --synth-r-db 8 --replicates 25 "
              "--points 2048 --bins 16 --seed 3 --out " + boot) == 0);
    CHECK(fs::exists(boot + ".csv"));
    CHECK(fs::exists(boot + ".json"));

    const std::string table = (dir.path / "table.csv").string();
    {
        std::ofstream t(table);
        t << "epsilon,mse\n0,0.94\n0.01,0.49\n0.02,1.17\n"
             "0.03,6.53\n0.04,4.64\n0.05,3.91\n";
    }
    const std::string out = (dir.path / "sel.txt").string();
    const std::string cmd = std::string(GQST_CLI_PATH) + " select --in " +
                            table + " > " + out + " 2>&1";
    CHECK(WEXITSTATUS(std::system(cmd.c_str())) == 0);
    std::ifstream s(out);
    std::string sel((std::istreambuf_iterator<char>(s)),
                    std::istreambuf_iterator<char>());
    CHECK(sel.find("best_epsilon=0.01") != std::string::npos);
}

TEST_CASE("cli exit codes") {
    CHECK(run("") == 2);                             // missing subcommand
    CHECK(run("generate --count 5") == 2);           // missing --out
    CHECK(run("frobnicate") == 2);                   // unknown subcommand
    CHECK(run("estimate --in /nonexistent.gqst") == 3);
    CHECK(run("select --in /nonexistent.csv") == 3);
    CHECK(run("estimate --in /nonexistent.gqst --method nn") == 2);  // no model
}

TEST_CASE("cli config file supplies defaults that flags override") {
    TempDir dir;
    const std::string cfg = (dir.path / "gen.cfg").string();
    {
        std::ofstream c(cfg);
        c << "generate.count=10\ngenerate.points=256\ngenerate.seed=12\n"
          << "generate.out=" << (dir.path / "cfg.gqst").string() << "\n";
    }
    CHECK(run("--config " + cfg + " generate") == 0);
    CHECK(fs::exists(dir.path / "cfg.gqst"));
}
