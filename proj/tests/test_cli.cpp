#include <gtest/gtest.h>

#include <cstdlib>
#include <filesystem>
#include <fstream>
#include <sstream>

#include "ocfem/cli.hpp"

using namespace ocfem;
using namespace ocfem::cli;
namespace fs = std::filesystem;

namespace {

fs::path scratch_dir(const std::string& name) {
    const auto dir = fs::temp_directory_path() / ("ocfem_test_" + name);
    fs::remove_all(dir);
    fs::create_directories(dir);
    return dir;
}

std::string slurp(const fs::path& p) {
    std::ifstream in(p, std::ios::binary);
    std::stringstream s;
    s << in.rdbuf();
    return s.str();
}

std::map<std::string, std::string> read_summary(const fs::path& p) {
    std::map<std::string, std::string> out;
    std::ifstream in(p);
    std::string line;
    while (std::getline(in, line)) {
        const auto eq = line.find(" = ");
        if (eq != std::string::npos) out[line.substr(0, eq)] = line.substr(eq + 3);
    }
    return out;
}

std::vector<std::string> split(const std::string& s, char sep) {
    std::vector<std::string> out;
    std::string cur;
    for (char c : s) {
        if (c == sep) {
            out.push_back(cur);
            cur.clear();
        } else {
            cur += c;
        }
    }
    out.push_back(cur);
    return out;
}

}  // namespace

TEST(Config, ParseLevels) {
    EXPECT_EQ(parse_levels("3..8"), std::make_pair(3, 8));
    EXPECT_THROW(parse_levels("8..3"), ValidationError);
    EXPECT_THROW(parse_levels("3-8"), ValidationError);
    EXPECT_THROW(parse_levels("a..b"), ValidationError);
}

TEST(Config, KeyValueOverrides) {
    RunConfig cfg;
    std::istringstream in("# comment\npreset = tikhonov-only\nnu = 0.1\nalpha=-0.5\nbeta = inf\nlevels = 2..5\n");
    apply_config(cfg, in);
    EXPECT_EQ(cfg.preset, "tikhonov-only");
    EXPECT_EQ(cfg.j_min, 2);
    EXPECT_EQ(cfg.j_max, 5);
    const auto spec = make_spec(cfg);
    EXPECT_EQ(spec.nu, 0.1);
    EXPECT_EQ(spec.bounds.alpha, -0.5);
    EXPECT_FALSE(spec.bounds.bounded_above());
}

TEST(Config, RejectsUnknownKeysAndBadValues) {
    RunConfig cfg;
    std::istringstream unknown("gamma = 1\n"), bad("nu = fast\n"), noeq("nu 1\n");
    EXPECT_THROW(apply_config(cfg, unknown), ValidationError);
    EXPECT_THROW(apply_config(cfg, bad), ValidationError);
    EXPECT_THROW(apply_config(cfg, noeq), ValidationError);
    cfg.preset = "nope";
    EXPECT_THROW(make_spec(cfg), UnknownPreset);
    cfg.preset = "paper-sec6";
    cfg.nu = -1.0;
    EXPECT_THROW(make_spec(cfg), ValidationError);
}

TEST(Csv, FormatAndEmptyOrders) {
    StudyRecord a;
    a.level = 3;
    a.h = 0.25;
    a.e_u = 0.125;
    a.outer_iterations = 2;
    StudyRecord b = a;
    b.level = 4;
    b.eoc_u = 1.0;
    std::ostringstream os;
    write_study_csv(os, {a, b});
    const auto text = os.str();
    EXPECT_EQ(text.find('\r'), std::string::npos);
    const auto lines = split(text, '\n');
    ASSERT_EQ(lines.size(), 4u);
    EXPECT_EQ(lines[0], "j,h,e_u,eoc_u,e_y,eoc_y,e_phi,eoc_phi,e_upost,eoc_upost,measure_T1,kkt,iters");
    const auto row = split(lines[1], ',');
    ASSERT_EQ(row.size(), 13u);
    EXPECT_EQ(row[0], "3");
    EXPECT_EQ(row[1], "2.500000000e-01");
    EXPECT_EQ(row[3], "");
    EXPECT_EQ(split(lines[2], ',')[3], "1.000000000e+00");
    EXPECT_EQ(lines[3], "");
}

TEST(CmdSolve, PaperPresetLevel4) {
    RunConfig cfg;
    cfg.level = 4;
    cfg.out = scratch_dir("solve").string();
    std::ostringstream log, err;
    ASSERT_EQ(cmd_solve(cfg, log, err), 0) << err.str();
    const auto summary = read_summary(fs::path(cfg.out) / "summary.txt");
    EXPECT_LE(std::stod(summary.at("kkt_residual")), 1e-9);
    EXPECT_EQ(summary.at("converged"), "true");
    for (const char* f : {"mesh.txt", "control.txt", "state.txt", "adjoint.txt"})
        EXPECT_TRUE(fs::exists(fs::path(cfg.out) / f)) << f;
    std::ifstream mesh_in(fs::path(cfg.out) / "mesh.txt");
    EXPECT_EQ(read_mesh(mesh_in)->num_triangles(), 512u);
}

TEST(CmdSolve, TikhonovOnlyWritesZeroControl) {
    RunConfig cfg;
    cfg.preset = "tikhonov-only";
    cfg.level = 3;
    cfg.out = scratch_dir("tikhonov").string();
    std::ostringstream log, err;
    ASSERT_EQ(cmd_solve(cfg, log, err), 0);
    std::ifstream in(fs::path(cfg.out) / "control.txt");
    const auto [tag, values] = read_field(in);
    EXPECT_EQ(tag, "p0");
    for (double v : values) EXPECT_EQ(v, 0.0);
}

TEST(CmdSolve, UnknownPresetExitsWithUsage) {
    RunConfig cfg;
    cfg.preset = "no-such-problem";
    std::ostringstream log, err;
    EXPECT_EQ(cmd_solve(cfg, log, err), 2);
    EXPECT_NE(err.str().find("unknown preset"), std::string::npos);
}

TEST(CmdStudy, SingleRowHasEmptyOrders) {
    RunConfig cfg;
    cfg.j_min = 3;
    cfg.j_max = 4;
    cfg.out = (scratch_dir("study1") / "s.csv").string();
    std::ostringstream log, err;
    ASSERT_EQ(cmd_study(cfg, log, err), 0);
    const auto lines = split(slurp(cfg.out), '\n');
    ASSERT_EQ(lines.size(), 3u);
    const auto row = split(lines[1], ',');
    EXPECT_EQ(row[0], "3");
    for (int i : {3, 5, 7, 9}) EXPECT_EQ(row[i], "");
}

TEST(CmdStudy, ByteIdenticalAcrossRuns) {
    const auto dir = scratch_dir("study2");
    RunConfig cfg;
    cfg.j_min = 2;
    cfg.j_max = 5;
    std::ostringstream log, err;
    cfg.out = (dir / "a.csv").string();
    ASSERT_EQ(cmd_study(cfg, log, err), 0);
    cfg.out = (dir / "b.csv").string();
    ASSERT_EQ(cmd_study(cfg, log, err), 0);
    EXPECT_EQ(slurp(dir / "a.csv"), slurp(dir / "b.csv"));
}

TEST(CmdCheck, PaperPresetPasses) {
    RunConfig cfg;
    cfg.level = 4;
    std::ostringstream out, err;
    EXPECT_EQ(cmd_check(cfg, out, err), 0) << out.str();
    EXPECT_EQ(out.str().find("FAIL"), std::string::npos);
}

TEST(CmdCheck, AdmissibilityViolationFailsCleanly) {
    RunConfig cfg;
    cfg.alpha = -3.0;
    std::ostringstream out, err;
    EXPECT_EQ(cmd_check(cfg, out, err), 1);
    EXPECT_NE(out.str().find("FAIL admissibility"), std::string::npos);
}

TEST(CmdCheck, ManufacturedConstantPreset) {
    RunConfig cfg;
    cfg.preset = "manufactured-constant";
    cfg.level = 3;
    std::ostringstream out, err;
    EXPECT_EQ(cmd_check(cfg, out, err), 0) << out.str();
    EXPECT_NE(out.str().find("PASS manufactured solution (manufactured-constant)"), std::string::npos);
}

#ifdef OCFEM_CLI_PATH
TEST(Executable, ExitCodes) {
    const std::string exe = OCFEM_CLI_PATH;
    const auto dir = scratch_dir("exe");
    auto run = [](const std::string& cmd) {
        const int status = std::system(cmd.c_str());
        return WIFEXITED(status) ? WEXITSTATUS(status) : -1;
    };
    EXPECT_EQ(run(exe + " solve --preset nope --level 2 2>/dev/null"), 2);
    EXPECT_EQ(run(exe + " study --levels 2..3 --out " + (dir / "s.csv").string() + " 2>/dev/null"), 0);
    EXPECT_EQ(split(slurp(dir / "s.csv"), '\n').size(), 3u);
    {
        std::ofstream cfg(dir / "run.cfg");
        cfg << "preset = manufactured-reaction\nlevel = 2\n";
    }
    EXPECT_EQ(run(exe + " check --config " + (dir / "run.cfg").string() + " > /dev/null"), 0);
    EXPECT_EQ(run(exe + " check --alpha -3 --level 2 > /dev/null"), 1);
    EXPECT_EQ(run(exe + " bogus 2>/dev/null"), 2);
}
#endif
