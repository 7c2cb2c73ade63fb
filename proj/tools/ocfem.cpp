#include <CLI11.hpp>

#include <iostream>
#include <string>

#include "ocfem/cli.hpp"

namespace {

void add_common(CLI::App* cmd, ocfem::cli::RunConfig& cfg, std::string& config_file) {
    cmd->add_option("--config", config_file, "key = value file (applied before the other flags)");
    cmd->add_option("--preset", cfg.preset, "problem preset");
    cmd->add_option("--nu", cfg.nu, "override nu");
    cmd->add_option("--alpha", cfg.alpha, "override lower bound");
    cmd->add_option("--beta", cfg.beta, "override upper bound");
    cmd->add_option("--kkt-tol", cfg.kkt_tol, "outer KKT tolerance");
    cmd->add_option("--newton-tol", cfg.newton_tol, "state Newton tolerance (relative)");
}

}  // namespace

int main(int argc, char** argv) {
    using namespace ocfem::cli;
    CLI::App app{"Finite element solver for bilinear optimal control of a semilinear elliptic equation"};
    app.require_subcommand(1);

    RunConfig flags;
    std::string config_file, levels;
    bool no_fields = false;

    auto* solve = app.add_subcommand("solve", "solve the discrete problem on one level");
    add_common(solve, flags, config_file);
    solve->add_option("--level", flags.level, "refinement level");
    solve->add_option("--out", flags.out, "output directory");
    solve->add_flag("--no-fields", no_fields, "write only summary.txt");

    auto* study = app.add_subcommand("study", "convergence study over levels A..B, CSV output");
    add_common(study, flags, config_file);
    study->add_option("--levels", levels, "level range A..B (default 3..8)");
    study->add_option("--out", flags.out, "CSV file (stdout when omitted)");

    auto* check = app.add_subcommand("check", "run the verification battery");
    add_common(check, flags, config_file);
    check->add_option("--level", flags.level, "refinement level");

    app.add_subcommand("presets", "list the built-in presets");

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        return app.exit(e) == 0 ? ok : usage;
    }

    if (app.got_subcommand("presets")) {
        for (const auto& name : ocfem::presets::names()) std::cout << name << '\n';
        return ok;
    }

    RunConfig cfg;
    auto* cmd = app.get_subcommands().front();
    try {
        if (!config_file.empty()) load_config_file(cfg, config_file);
        if (cmd->count("--preset")) cfg.preset = flags.preset;
        if (cmd->count("--nu")) cfg.nu = flags.nu;
        if (cmd->count("--alpha")) cfg.alpha = flags.alpha;
        if (cmd->count("--beta")) cfg.beta = flags.beta;
        if (cmd->count("--kkt-tol")) cfg.kkt_tol = flags.kkt_tol;
        if (cmd->count("--newton-tol")) cfg.newton_tol = flags.newton_tol;
        if (cmd->get_option_no_throw("--level") && cmd->count("--level")) cfg.level = flags.level;
        if (cmd->get_option_no_throw("--out") && cmd->count("--out")) cfg.out = flags.out;
        if (!levels.empty()) std::tie(cfg.j_min, cfg.j_max) = parse_levels(levels);
        if (no_fields) cfg.emit_fields = false;
        if (cfg.level < 0) throw ocfem::ValidationError("level must be non-negative");
    } catch (const ocfem::ValidationError& e) {
        std::cerr << "error: " << e.what() << '\n';
        return usage;
    }

    if (cmd == solve) return cmd_solve(cfg);
    if (cmd == study) return cmd_study(cfg);
    return cmd_check(cfg);
}
