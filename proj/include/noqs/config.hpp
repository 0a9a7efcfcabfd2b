#pragma once

#include <fstream>
#include <functional>
#include <map>
#include <set>
#include <sstream>
#include <string>

#include "noqs/finetune.hpp"
#include "noqs/training.hpp"

namespace noqs {

// Sectioned key=value text. Comments start with '#' or ';'.
class IniFile {
public:
    static IniFile parse(std::istream& is) {
        IniFile f;
        std::string line, section;
        int lineno = 0;
        while (std::getline(is, line)) {
            ++lineno;
            const std::string s = detail::trim_ws(line);
            if (s.empty() || s[0] == '#' || s[0] == ';') continue;
            if (s.front() == '[') {
                if (s.back() != ']')
                    throw config_error("line " + std::to_string(lineno) + ": unterminated section");
                section = detail::trim_ws(s.substr(1, s.size() - 2));
                if (section.empty())
                    throw config_error("line " + std::to_string(lineno) + ": empty section name");
                continue;
            }
            auto eq = s.find('=');
            if (eq == std::string::npos)
                throw config_error("line " + std::to_string(lineno) + ": expected key=value: " + s);
            const std::string key = detail::trim_ws(s.substr(0, eq));
            if (key.empty())
                throw config_error("line " + std::to_string(lineno) + ": empty key");
            f.entries_[section + "." + key] = detail::trim_ws(s.substr(eq + 1));
        }
        return f;
    }

    static IniFile parse_file(const std::string& path) {
        std::ifstream is(path);
        if (!is) throw io_error("cannot open config file: " + path);
        return parse(is);
    }

    const std::map<std::string, std::string>& entries() const { return entries_; }

private:
    std::map<std::string, std::string> entries_;
};

// Run-wide configuration. Every field has a default; unknown keys in a config
// file are rejected.
struct RunConfig {
    int lx = 2, ly = 2;
    SiteOrdering ordering = SiteOrdering::raster;
    HamiltonianSpec ham;
    TransformerConfig wf;   // n_sites derived from the lattice
    FNOConfig op;           // d_e derived from the ansatz
    TrainConfig train;
    FinetuneConfig ft;
    int eval_samples = 4096;
    int eval_times = 21;
    int checkpoint_every = 1000;
    std::uint64_t seed = 1;

    Lattice lattice() const { return build_lattice(lx, ly, ordering); }

    void finalize() {
        wf.n_sites = lx * ly;
        op.d_e = wf.d_e;
        train.seed = seed;
        ft.seed = seed;
        wf.validate();
        op.validate();
        train.validate();
        ft.validate();
        if (eval_samples < 2 || eval_times < 2) throw config_error("invalid evaluation settings");
        if (checkpoint_every < 1) throw config_error("checkpoint_every must be positive");
    }

    static RunConfig from_ini(const IniFile& f) {
        RunConfig c;
        std::map<std::string, std::function<void(const std::string&)>> schema;
        auto num = [](auto& field) {
            return [&field](const std::string& v) {
                std::stringstream ss(v);
                if (!(ss >> field) || !(ss >> std::ws).eof())
                    throw config_error("malformed numeric value: " + v);
            };
        };
        schema["lattice.lx"] = num(c.lx);
        schema["lattice.ly"] = num(c.ly);
        schema["lattice.ordering"] = [&c](const std::string& v) {
            if (v == "raster")
                c.ordering = SiteOrdering::raster;
            else if (v == "snake")
                c.ordering = SiteOrdering::snake;
            else
                throw config_error("unknown site ordering: " + v);
        };
        schema["hamiltonian.j"] = num(c.ham.j);
        schema["ansatz.d_e"] = num(c.wf.d_e);
        schema["ansatz.n_h"] = num(c.wf.n_h);
        schema["ansatz.d_f"] = num(c.wf.d_f);
        schema["ansatz.l_t"] = num(c.wf.l_t);
        schema["operator.n_t"] = num(c.op.n_t);
        schema["operator.t_max"] = num(c.op.t_max);
        schema["operator.l_f"] = num(c.op.l_f);
        schema["operator.d_v"] = num(c.op.d_v);
        schema["operator.k_max"] = num(c.op.k_max);
        schema["operator.n_c"] = num(c.op.n_c);
        schema["ensemble.n_max"] = num(c.train.ensemble.n_max);
        schema["ensemble.omega"] = num(c.train.ensemble.omega);
        schema["ensemble.h_x0"] = num(c.train.ensemble.h_x0);
        schema["ensemble.h_z0"] = num(c.train.ensemble.h_z0);
        schema["ensemble.amp_scale_x"] = num(c.train.ensemble.amp_scale_x);
        schema["ensemble.amp_scale_z"] = num(c.train.ensemble.amp_scale_z);
        schema["training.steps"] = num(c.train.steps);
        schema["training.batch_protocols"] = num(c.train.batch_protocols);
        schema["training.times_per_protocol"] = num(c.train.times_per_protocol);
        schema["training.samples_per_time"] = num(c.train.samples_per_time);
        schema["training.lr0"] = num(c.train.lr0);
        schema["training.lr_min"] = num(c.train.lr_min);
        schema["training.lr_decay"] = num(c.train.lr_decay);
        schema["training.lr_decay_every"] = num(c.train.lr_decay_every);
        schema["training.lambda_anchor"] = num(c.train.lambda_anchor);
        schema["training.pretrain_steps"] = num(c.train.pretrain_steps);
        schema["training.pretrain_lr"] = num(c.train.pretrain_lr);
        schema["training.variance_weighting"] = num(c.train.variance_weighting);
        schema["training.exact_expectations"] = [&c](const std::string& v) {
            if (v == "true" || v == "1")
                c.train.exact_expectations = true;
            else if (v == "false" || v == "0")
                c.train.exact_expectations = false;
            else
                throw config_error("training.exact_expectations must be true or false");
        };
        schema["training.initial_state"] = [&c](const std::string& v) {
            c.train.initial_state = initial_state_from(v);
        };
        schema["training.checkpoint_every"] = num(c.checkpoint_every);
        schema["finetune.steps"] = num(c.ft.steps);
        schema["finetune.lr"] = num(c.ft.lr);
        schema["finetune.n_samples"] = num(c.ft.n_samples);
        schema["finetune.freeze_operator"] = [&c](const std::string& v) {
            if (v == "true" || v == "1")
                c.ft.freeze_operator = true;
            else if (v == "false" || v == "0")
                c.ft.freeze_operator = false;
            else
                throw config_error("expected boolean, got: " + v);
        };
        schema["evaluate.n_samples"] = num(c.eval_samples);
        schema["evaluate.n_times"] = num(c.eval_times);
        schema["run.seed"] = num(c.seed);

        for (const auto& [key, value] : f.entries()) {
            auto it = schema.find(key);
            if (it == schema.end()) throw config_error("unknown config key: " + key);
            try {
                it->second(value);
            } catch (const config_error&) {
                throw;
            } catch (const std::exception& e) {
                throw config_error("bad value for " + key + ": " + e.what());
            }
        }
        c.finalize();
        return c;
    }

    static RunConfig from_file(const std::string& path) {
        return from_ini(IniFile::parse_file(path));
    }

    // Full snapshot in the same format from_ini accepts; parses back to an
    // equivalent configuration.
    std::string to_ini() const {
        std::ostringstream o;
        o << "[lattice]\nlx = " << lx << "\nly = " << ly << "\nordering = "
          << (ordering == SiteOrdering::snake ? "snake" : "raster") << "\n\n";
        o << "[hamiltonian]\nj = " << detail::fmt17(ham.j) << "\n\n";
        o << "[ansatz]\nd_e = " << wf.d_e << "\nn_h = " << wf.n_h << "\nd_f = " << wf.d_f
          << "\nl_t = " << wf.l_t << "\n\n";
        o << "[operator]\nn_t = " << op.n_t << "\nt_max = " << detail::fmt17(op.t_max)
          << "\nl_f = " << op.l_f << "\nd_v = " << op.d_v << "\nk_max = " << op.k_max
          << "\nn_c = " << op.n_c << "\n\n";
        o << "[ensemble]\nn_max = " << train.ensemble.n_max << "\nomega = "
          << detail::fmt17(train.ensemble.omega) << "\nh_x0 = " << detail::fmt17(train.ensemble.h_x0)
          << "\nh_z0 = " << detail::fmt17(train.ensemble.h_z0) << "\namp_scale_x = "
          << detail::fmt17(train.ensemble.amp_scale_x) << "\namp_scale_z = "
          << detail::fmt17(train.ensemble.amp_scale_z) << "\n\n";
        o << "[training]\nsteps = " << train.steps << "\nbatch_protocols = "
          << train.batch_protocols << "\ntimes_per_protocol = " << train.times_per_protocol
          << "\nsamples_per_time = " << train.samples_per_time << "\nlr0 = "
          << detail::fmt17(train.lr0) << "\nlr_min = " << detail::fmt17(train.lr_min)
          << "\nlr_decay = " << detail::fmt17(train.lr_decay) << "\nlr_decay_every = "
          << train.lr_decay_every << "\nlambda_anchor = " << detail::fmt17(train.lambda_anchor)
          << "\npretrain_steps = " << train.pretrain_steps << "\npretrain_lr = "
          << detail::fmt17(train.pretrain_lr) << "\nvariance_weighting = "
          << detail::fmt17(train.variance_weighting) << "\nexact_expectations = "
          << (train.exact_expectations ? "true" : "false") << "\ninitial_state = "
          << (train.initial_state == InitialState::ferro ? "ferro" : "plus")
          << "\ncheckpoint_every = " << checkpoint_every << "\n\n";
        o << "[finetune]\nsteps = " << ft.steps << "\nlr = " << detail::fmt17(ft.lr)
          << "\nn_samples = " << ft.n_samples << "\nfreeze_operator = "
          << (ft.freeze_operator ? "true" : "false") << "\n\n";
        o << "[evaluate]\nn_samples = " << eval_samples << "\nn_times = " << eval_times << "\n\n";
        o << "[run]\nseed = " << seed << "\n";
        return o.str();
    }
};

} // namespace noqs
