// Command-line front end: protocol generation, training, evaluation,
// fine-tuning, super-resolution studies, exact propagation, and report
// comparison. Exit codes: 0 success, 2 configuration error, 3 numeric
// failure, 4 I/O or corruption error.

#include <CLI11.hpp>

#include <cstdlib>
#include <filesystem>
#include <iostream>
#include <sstream>

#include "noqs/checkpoint.hpp"
#include "noqs/config.hpp"
#include "noqs/finetune.hpp"
#include "noqs/report.hpp"
#include "noqs/svgplot.hpp"

namespace fs = std::filesystem;
using namespace noqs;

namespace {

void apply_workers_env() {
    const char* w = std::getenv("NOQS_WORKERS");
    if (!w) return;
    char* end = nullptr;
    const long n = std::strtol(w, &end, 10);
    if (!end || *end != '\0' || n < 1) throw config_error("NOQS_WORKERS must be a positive integer");
    Eigen::setNbThreads(static_cast<int>(n));
}

void write_text_atomic(const std::string& path, const std::string& content) {
    detail::write_atomic(path, content);
}

std::vector<double> linspace(double t_max, int n) {
    std::vector<double> t(n);
    for (int i = 0; i < n; ++i) t[i] = t_max * i / (n - 1);
    return t;
}

RunConfig load_config(const std::string& path, std::uint64_t seed_override, bool have_seed) {
    RunConfig cfg = path.empty() ? RunConfig{} : RunConfig::from_file(path);
    if (have_seed) cfg.seed = seed_override;
    cfg.finalize();
    return cfg;
}

StateVector initial_for(InitialState init, int n) {
    return init == InitialState::ferro ? initial_state_up(n) : initial_state_plus(n);
}

void plot_reports(const std::string& prefix, const TrajectoryReport& a, const TrajectoryReport& b,
                  const std::string& label_a, const std::string& label_b) {
    struct Col {
        const char* name;
        double TrajectoryRow::*y;
        double TrajectoryRow::*err;
    };
    const Col cols[] = {{"x", &TrajectoryRow::x, &TrajectoryRow::x_err},
                        {"zz", &TrajectoryRow::zz, &TrajectoryRow::zz_err},
                        {"z", &TrajectoryRow::z, &TrajectoryRow::z_err},
                        {"e", &TrajectoryRow::e, &TrajectoryRow::e_err}};
    for (const auto& c : cols) {
        PlotSpec spec;
        spec.title = c.name;
        spec.y_label = c.name;
        PlotSeries sa, sb;
        sa.label = label_a;
        sb.label = label_b;
        sb.color = "#b22222";
        for (const auto& r : a.rows) {
            sa.x.push_back(r.t);
            sa.y.push_back(r.*(c.y));
            sa.y_err.push_back(r.*(c.err));
        }
        for (const auto& r : b.rows) {
            sb.x.push_back(r.t);
            sb.y.push_back(r.*(c.y));
            sb.y_err.push_back(r.*(c.err));
        }
        spec.series = {sa, sb};
        write_svg(prefix + "_" + c.name + ".svg", spec);
    }
}

std::string report_to_string(const TrajectoryReport& r) {
    std::ostringstream os;
    write_report(os, r);
    return os.str();
}

// ---- subcommands ----

void cmd_generate_protocols(const std::string& config_path, const std::string& out_dir, int count,
                            const std::string& kind, std::uint64_t seed, bool have_seed,
                            const std::vector<double>& shape) {
    RunConfig cfg = load_config(config_path, seed, have_seed);
    fs::create_directories(out_dir);
    TimeGrid grid = cfg.op.grid();
    for (int i = 0; i < count; ++i) {
        Protocol p;
        if (kind == "fourier") {
            const std::uint64_t pseed =
                Rng::substream(cfg.seed, {12, static_cast<std::uint64_t>(i)}).below(1u << 30);
            p = sample_fourier_protocol(cfg.train.ensemble, grid, pseed);
        } else if (kind == "gaussian") {
            if (shape.size() != 4)
                throw config_error("gaussian kind needs --shape amplitude,center,width,baseline");
            p = make_gaussian_pulse(grid, shape[0], shape[1], shape[2], shape[3]);
        } else if (kind == "tanh") {
            if (shape.size() != 4)
                throw config_error("tanh kind needs --shape start,stop,center,steepness");
            p = make_tanh_ramp(grid, shape[0], shape[1], shape[2], shape[3]);
        } else {
            throw config_error("unknown protocol kind: " + kind);
        }
        std::ostringstream name;
        name << out_dir << "/proto_" << std::setw(3) << std::setfill('0') << i << ".txt";
        std::ostringstream body;
        write_protocol(body, p);
        write_text_atomic(name.str(), body.str());
    }
    std::cout << "wrote " << count << " protocol(s) to " << out_dir << "\n";
}

TrainState make_state(const RunConfig& cfg) {
    TrainState st;
    st.model = Model::create(cfg.lattice(), cfg.wf, cfg.op, cfg.seed);
    st.model.ham = cfg.ham;
    st.adam.init(st.model.params);
    st.seed = cfg.seed;
    return st;
}

void cmd_pretrain(const std::string& config_path, const std::string& out_dir, std::uint64_t seed,
                  bool have_seed) {
    RunConfig cfg = load_config(config_path, seed, have_seed);
    fs::create_directories(out_dir);
    TrainState st = make_state(cfg);
    Trainer tr(st.model, cfg.train);
    const double anchor = tr.pretrain();
    st.adam = tr.adam();
    save_checkpoint(out_dir + "/pretrained.noqs", st);
    write_text_atomic(out_dir + "/config_snapshot.ini", cfg.to_ini());
    std::cout << "pretrain done, anchor loss " << anchor << "\n";
}

void cmd_train(const std::string& config_path, const std::string& out_dir,
               const std::string& resume, std::uint64_t seed, bool have_seed, int steps_override) {
    RunConfig cfg = load_config(config_path, seed, have_seed);
    if (steps_override >= 0) cfg.train.steps = steps_override;
    fs::create_directories(out_dir);

    TrainState st;
    if (resume.empty()) {
        st = make_state(cfg);
    } else {
        st = load_checkpoint(resume);
        cfg.seed = st.seed;
        cfg.train.seed = st.seed;
    }
    Trainer tr(st.model, cfg.train);
    tr.adam() = st.adam;
    tr.set_step(st.step);
    if (resume.empty() && cfg.train.pretrain_steps > 0) {
        const double anchor = tr.pretrain();
        std::cout << "pretrain anchor loss " << anchor << "\n";
    }

    std::ostringstream log;
    log << "# step loss anchor lr clamps\n";
    auto checkpoint_now = [&](const std::string& name) {
        st.adam = tr.adam();
        st.step = tr.current_step();
        save_checkpoint(out_dir + "/" + name, st);
    };
    while (tr.current_step() < cfg.train.steps) {
        StepResult r = tr.step();
        log << tr.current_step() - 1 << " " << detail::fmt17(r.loss) << " "
            << detail::fmt17(r.anchor) << " " << detail::fmt17(r.lr) << " " << r.clamp_count
            << "\n";
        if (tr.current_step() % cfg.checkpoint_every == 0 ||
            tr.current_step() == cfg.train.steps) {
            checkpoint_now("ckpt_step_" + std::to_string(tr.current_step()) + ".noqs");
            checkpoint_now("ckpt_latest.noqs");
            write_text_atomic(out_dir + "/loss_log.txt", log.str());
        }
        if (tr.current_step() % 100 == 0)
            std::cout << "step " << tr.current_step() << " loss " << r.loss << " anchor "
                      << r.anchor << "\n";
    }
    checkpoint_now("ckpt_latest.noqs");
    write_text_atomic(out_dir + "/loss_log.txt", log.str());
    write_text_atomic(out_dir + "/config_snapshot.ini", cfg.to_ini());
    std::cout << "training done at step " << tr.current_step() << "\n";
}

void cmd_evaluate(const std::string& ckpt_path, const std::string& protocol_path,
                  const std::string& out_path, int n_samples, int n_times, std::uint64_t seed,
                  const std::string& plot_prefix) {
    TrainState st = load_checkpoint(ckpt_path);
    Protocol p = read_protocol(protocol_path);
    if (p.grid.t_max != st.model.op.t_max)
        throw config_error("protocol t_max does not match the checkpointed operator");
    auto rep = evaluate_trajectory(st.model, p, linspace(p.grid.t_max, n_times), n_samples, seed);
    rep.meta["checkpoint"] = ckpt_path;
    rep.meta["protocol"] = protocol_path;
    write_text_atomic(out_path, report_to_string(rep));
    if (!plot_prefix.empty()) plot_reports(plot_prefix, rep, rep, "model", "model");
    std::cout << "wrote " << out_path << "\n";
}

void cmd_oracle(const std::string& protocol_path, int lx, int ly, const std::string& initial,
                const std::string& out_path, int n_times, double tol) {
    Protocol p = read_protocol(protocol_path);
    Lattice lat = build_lattice(lx, ly);
    HamiltonianSpec ham;
    auto psi0 = initial_for(initial_state_from(initial), lat.n);
    auto rep = oracle_trajectory(lat, ham, p, psi0, linspace(p.grid.t_max, n_times), tol);
    rep.meta["protocol"] = protocol_path;
    rep.meta["initial"] = initial;
    write_text_atomic(out_path, report_to_string(rep));
    std::cout << "wrote " << out_path << "\n";
}

void cmd_compare(const std::string& a_path, const std::string& b_path,
                 const std::string& out_path, const std::string& plot_prefix) {
    auto a = read_report(a_path);
    auto b = read_report(b_path);
    auto m = compare_reports(a, b);
    std::ostringstream os;
    write_metrics(os, m);
    write_text_atomic(out_path, os.str());
    if (!plot_prefix.empty()) plot_reports(plot_prefix, a, b, "a", "b");
    std::cout << os.str();
}

void cmd_finetune(const std::string& ckpt_path, const std::string& protocol_path,
                  const std::string& meas_path, const std::string& out_dir, int steps, double lr,
                  int n_samples, bool freeze_op, std::uint64_t seed, bool have_seed,
                  int eval_times, int eval_samples) {
    TrainState st = load_checkpoint(ckpt_path);
    Protocol p = read_protocol(protocol_path);
    MeasurementSet ms = read_measurements(meas_path);
    fs::create_directories(out_dir);
    FinetuneConfig cfg;
    cfg.steps = steps;
    cfg.lr = lr;
    cfg.n_samples = n_samples;
    cfg.freeze_operator = freeze_op;
    cfg.seed = have_seed ? seed : st.seed;

    const auto times = linspace(p.grid.t_max, eval_times);
    auto before = evaluate_trajectory(st.model, p, times, eval_samples, cfg.seed + 1);
    before.meta["stage"] = "before";
    write_text_atomic(out_dir + "/report_before.txt", report_to_string(before));

    auto res = finetune(st.model, p, ms, cfg);

    auto after = evaluate_trajectory(st.model, p, times, eval_samples, cfg.seed + 1);
    after.meta["stage"] = "after";
    write_text_atomic(out_dir + "/report_after.txt", report_to_string(after));

    std::ostringstream log;
    log << "# step data_loss\n";
    for (std::size_t s = 0; s < res.losses.size(); ++s)
        log << s << " " << detail::fmt17(res.losses[s]) << "\n";
    write_text_atomic(out_dir + "/finetune_loss.txt", log.str());
    st.adam.init(st.model.params);
    save_checkpoint(out_dir + "/finetuned.noqs", st);
    std::cout << "fine-tuning done; data loss " << res.losses.front() << " -> "
              << res.losses.back() << "\n";
}

void cmd_superres(const std::string& ckpt_path, const std::string& protocol_path, int eval_nt,
                  const std::string& out_dir, int n_samples, std::uint64_t seed,
                  const std::string& initial) {
    TrainState st = load_checkpoint(ckpt_path);
    Protocol p = read_protocol(protocol_path);
    const int train_nt = st.model.op.n_t;
    if (eval_nt < train_nt) throw config_error("eval n_t must be >= the training n_t");
    fs::create_directories(out_dir);

    TimeGrid eval_grid(p.grid.t_max, eval_nt);
    Protocol pe = resample(p, eval_grid);
    const auto times = eval_grid.points();
    auto model_rep = evaluate_trajectory(st.model, pe, times, n_samples, seed);
    model_rep.meta["eval_n_t"] = std::to_string(eval_nt);
    write_text_atomic(out_dir + "/model_report.txt", report_to_string(model_rep));

    auto psi0 = initial_for(initial_state_from(initial), st.model.lat.n);
    auto oracle_rep = oracle_trajectory(st.model.lat, st.model.ham, pe, psi0, times);
    write_text_atomic(out_dir + "/oracle_report.txt", report_to_string(oracle_rep));

    // error profile and grid classification (old = near a training grid point)
    const double dt_train = p.grid.t_max / (train_nt - 1);
    std::vector<double> err_x(times.size()), err_zz(times.size());
    double max_old = 0, max_new = 0;
    std::ostringstream profile;
    profile << "# t err_x err_zz on_training_grid\n";
    for (std::size_t i = 0; i < times.size(); ++i) {
        err_x[i] = std::abs(model_rep.rows[i].x - oracle_rep.rows[i].x);
        err_zz[i] = std::abs(model_rep.rows[i].zz - oracle_rep.rows[i].zz);
        const double nearest = std::abs(times[i] / dt_train - std::round(times[i] / dt_train));
        const bool old_point = nearest < 0.25;
        (old_point ? max_old : max_new) = std::max(old_point ? max_old : max_new, err_x[i]);
        profile << detail::fmt17(times[i]) << " " << detail::fmt17(err_x[i]) << " "
                << detail::fmt17(err_zz[i]) << " " << (old_point ? 1 : 0) << "\n";
    }
    write_text_atomic(out_dir + "/superres_profile.txt", profile.str());

    const double hf = high_frequency_energy_fraction(err_x, train_nt / 2);
    std::ostringstream metrics;
    metrics << "train_n_t=" << train_nt << "\neval_n_t=" << eval_nt << "\n";
    metrics << "max_err_x_training_grid=" << detail::fmt17(max_old) << "\n";
    metrics << "max_err_x_new_points=" << detail::fmt17(max_new) << "\n";
    metrics << "high_frequency_energy_fraction=" << detail::fmt17(hf) << "\n";
    write_text_atomic(out_dir + "/superres_metrics.txt", metrics.str());
    std::cout << "superres: max err (old grid) " << max_old << ", (new points) " << max_new
              << ", high-frequency fraction " << hf << "\n";
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"Neural-operator quantum states for driven spin systems"};
    app.require_subcommand(1);

    std::string config_path, out_dir = ".", out_path = "report.txt";
    std::string ckpt_path, protocol_path, meas_path, a_path, b_path, plot_prefix, resume;
    std::string kind = "fourier", initial = "plus";
    std::vector<double> shape;
    int count = 1, n_samples = 4096, n_times = 21, eval_nt = 0, steps_override = -1;
    int ft_steps = 300, ft_samples = 1024;
    double ft_lr = 3e-4, tol = 1e-9;
    bool freeze_op = false;
    std::uint64_t seed = 1;
    int lx = 2, ly = 2;

    auto* gen = app.add_subcommand("generate-protocols", "Sample driving protocols to files");
    gen->add_option("--config", config_path);
    gen->add_option("--out", out_dir)->required();
    gen->add_option("--count", count);
    gen->add_option("--kind", kind)->check(CLI::IsMember({"fourier", "gaussian", "tanh"}));
    gen->add_option("--shape", shape)->delimiter(',');
    auto* gen_seed = gen->add_option("--seed", seed);

    auto* pre = app.add_subcommand("pretrain", "Fit the initial state anchor only");
    pre->add_option("--config", config_path);
    pre->add_option("--out", out_dir)->required();
    auto* pre_seed = pre->add_option("--seed", seed);

    auto* trn = app.add_subcommand("train", "Self-supervised training on the protocol ensemble");
    trn->add_option("--config", config_path);
    trn->add_option("--out", out_dir)->required();
    trn->add_option("--resume", resume);
    trn->add_option("--steps", steps_override);
    auto* trn_seed = trn->add_option("--seed", seed);

    auto* ev = app.add_subcommand("evaluate", "Observable trajectory from a checkpoint");
    ev->add_option("--checkpoint", ckpt_path)->required();
    ev->add_option("--protocol", protocol_path)->required();
    ev->add_option("--out", out_path)->required();
    ev->add_option("--n-samples", n_samples);
    ev->add_option("--n-times", n_times);
    ev->add_option("--plot", plot_prefix);
    ev->add_option("--seed", seed);

    auto* orc = app.add_subcommand("oracle", "Exact dense propagation trajectory");
    orc->add_option("--protocol", protocol_path)->required();
    orc->add_option("--out", out_path)->required();
    orc->add_option("--lx", lx);
    orc->add_option("--ly", ly);
    orc->add_option("--initial", initial)->check(CLI::IsMember({"plus", "ferro"}));
    orc->add_option("--n-times", n_times);
    orc->add_option("--tol", tol);

    auto* ft = app.add_subcommand("finetune", "Refine a checkpoint on sparse measurements");
    ft->add_option("--checkpoint", ckpt_path)->required();
    ft->add_option("--protocol", protocol_path)->required();
    ft->add_option("--measurements", meas_path)->required();
    ft->add_option("--out", out_dir)->required();
    ft->add_option("--steps", ft_steps);
    ft->add_option("--lr", ft_lr);
    ft->add_option("--n-samples", ft_samples);
    ft->add_flag("--freeze-operator", freeze_op);
    ft->add_option("--eval-times", n_times);
    ft->add_option("--eval-samples", n_samples);
    auto* ft_seed = ft->add_option("--seed", seed);

    auto* sr = app.add_subcommand("superres", "Evaluate on a finer time grid than trained");
    sr->add_option("--checkpoint", ckpt_path)->required();
    sr->add_option("--protocol", protocol_path)->required();
    sr->add_option("--eval-nt", eval_nt)->required();
    sr->add_option("--out", out_dir)->required();
    sr->add_option("--n-samples", n_samples);
    sr->add_option("--initial", initial)->check(CLI::IsMember({"plus", "ferro"}));
    sr->add_option("--seed", seed);

    auto* cmp = app.add_subcommand("compare", "Deviation metrics between two reports");
    cmp->add_option("--a", a_path)->required();
    cmp->add_option("--b", b_path)->required();
    cmp->add_option("--out", out_path)->required();
    cmp->add_option("--plot", plot_prefix);

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError& e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : 2;
    }

    try {
        apply_workers_env();
        if (gen->parsed())
            cmd_generate_protocols(config_path, out_dir, count, kind, seed, !gen_seed->empty(),
                                   shape);
        else if (pre->parsed())
            cmd_pretrain(config_path, out_dir, seed, !pre_seed->empty());
        else if (trn->parsed())
            cmd_train(config_path, out_dir, resume, seed, !trn_seed->empty(), steps_override);
        else if (ev->parsed())
            cmd_evaluate(ckpt_path, protocol_path, out_path, n_samples, n_times, seed,
                         plot_prefix);
        else if (orc->parsed())
            cmd_oracle(protocol_path, lx, ly, initial, out_path, n_times, tol);
        else if (ft->parsed())
            cmd_finetune(ckpt_path, protocol_path, meas_path, out_dir, ft_steps, ft_lr, ft_samples,
                         freeze_op, seed, !ft_seed->empty(), n_times, n_samples);
        else if (sr->parsed())
            cmd_superres(ckpt_path, protocol_path, eval_nt, out_dir, n_samples, seed, initial);
        else if (cmp->parsed())
            cmd_compare(a_path, b_path, out_path, plot_prefix);
    } catch (const config_error& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const numeric_error& e) {
        std::cerr << "numeric error: " << e.what() << "\n";
        return 3;
    } catch (const io_error& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 4;
    } catch (const std::invalid_argument& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
