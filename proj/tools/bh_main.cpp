// Command-line front end: train, sample, simulate, harmonize, evaluate, sweep.
// Exit codes: 0 success, 2 usage/config, 3 I/O or data, 4 numerical abort,
// 5 total failure (no image survived).

#include <cstdio>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "bh/baselines.hpp"
#include "bh/harmonize.hpp"
#include "bh/io.hpp"
#include "bh/metrics.hpp"
#include "bh/phantom.hpp"
#include "bh/train.hpp"

namespace fs = std::filesystem;
using namespace bh;

namespace {

void require_file(const std::string& p, const char* what) {
    if (!fs::is_regular_file(p)) {
        throw IoError(std::string(what) + " not found: " + p);
    }
}

void require_dir(const std::string& p, const char* what) {
    if (!fs::is_directory(p)) {
        throw IoError(std::string(what) + " not found: " + p);
    }
}

std::vector<std::string> split_list(const std::string& s) {
    std::vector<std::string> out;
    std::string cur;
    std::stringstream ss(s);
    while (std::getline(ss, cur, ',')) {
        if (!cur.empty()) out.push_back(cur);
    }
    return out;
}

// ---------------------------------------------------------------------------

int cmd_train(const std::string& data_dir, const std::string& config_path,
              const std::string& out_path, bool seed_given, std::uint64_t seed) {
    require_dir(data_dir, "--data directory");
    require_file(config_path, "--config file");

    RunConfig rc = load_run_config(config_path);
    if (seed_given) rc.train.seed = seed;

    TargetDataset ds = load_dataset(data_dir);
    if (!rc.present.count("input_height")) rc.arch.input_height = ds.images.front().height;
    if (!rc.present.count("input_width")) rc.arch.input_width = ds.images.front().width;
    rc.arch.validate();
    rc.train.validate();

    std::ofstream log(out_path + ".log", std::ios::trunc);
    if (!log) throw IoError("cannot write training log " + out_path + ".log");

    TrainHooks hooks;
    hooks.on_log = [&](int step, double bpd, double lr) {
        char line[128];
        std::snprintf(line, sizeof(line), "step=%d nll_bpd=%.6f lr=%.8f\n", step, bpd, lr);
        log << line;
    };
    hooks.on_checkpoint = [&](int step, const FlowModel& m) {
        if (step < rc.train.total_steps) {
            save_checkpoint(m, out_path + ".step" + std::to_string(step));
        }
    };

    FlowModel model = train(ds, rc.arch, rc.train, hooks);
    save_checkpoint(model, out_path);
    write_image(out_path + ".mean.bhimg", ds.mean_image);
    std::cout << "trained " << rc.train.total_steps << " steps on " << ds.images.size()
              << " images; checkpoint: " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_sample(const std::string& ckpt, int n, double temperature, std::uint64_t seed,
               const std::string& out_dir) {
    if (n < 0) throw ConfigError("--n must be >= 0");
    if (!(temperature >= 0.0)) throw ConfigError("--temperature must be >= 0");
    require_file(ckpt, "--ckpt checkpoint");
    FlowModel model = load_checkpoint(ckpt);
    fs::create_directories(out_dir);
    if (n == 0) return 0;

    int tile = 1;
    while (tile * tile < n) ++tile;
    int h = model.arch.input_height, w = model.arch.input_width;
    ImageGrid sheet(tile * h, tile * w);
    for (int i = 0; i < n; ++i) {
        ImageGrid img = minmax_normalize(sample(model, seed + static_cast<std::uint64_t>(i),
                                                temperature));
        char name[32];
        std::snprintf(name, sizeof(name), "sample_%03d.pgm", i);
        write_image(fs::path(out_dir) / name, img);
        int ti = (i / tile) * h, tj = (i % tile) * w;
        for (int y = 0; y < h; ++y) {
            for (int x = 0; x < w; ++x) sheet.at(ti + y, tj + x) = img.at(y, x);
        }
    }
    write_image(fs::path(out_dir) / "contact_sheet.pgm", sheet);
    std::cout << "wrote " << n << " samples to " << out_dir << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_simulate(const std::string& data_dir, const std::string& transform,
                 double gamma_power, bool gamma_given, double log_epsilon,
                 const std::string& out_dir) {
    require_dir(data_dir, "--data directory");
    DomainTransform t;
    if (transform == "exp") {
        t.kind = TransformKind::Exp;
    } else if (transform == "log") {
        t.kind = TransformKind::Log;
        t.log_epsilon = log_epsilon;
    } else if (transform == "gamma") {
        t.kind = TransformKind::Gamma;
        if (!gamma_given) throw ConfigError("--gamma-power is required for --transform gamma");
        t.gamma_power = gamma_power;
    } else {
        throw ConfigError("unknown transform '" + transform + "' (want exp|log|gamma)");
    }
    t.validate();

    auto files = list_dataset_files(data_dir);
    if (files.empty()) throw IoError("no images in " + data_dir);
    fs::create_directories(out_dir);
    for (const auto& f : files) {
        ImageGrid x = minmax_normalize(read_image(f));
        write_image(fs::path(out_dir) / f.filename(), simulate_domain(x, t));
    }
    std::string manifest = "transform=" + transform;
    if (t.kind == TransformKind::Gamma) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " power=%g", t.gamma_power);
        manifest += buf;
    } else if (t.kind == TransformKind::Log) {
        char buf[32];
        std::snprintf(buf, sizeof(buf), " epsilon=%g", t.log_epsilon);
        manifest += buf;
    }
    manifest += "\n";
    iodet::spit(fs::path(out_dir) / "manifest.txt", manifest);
    std::cout << "simulated " << files.size() << " images: " << manifest;
    return 0;
}

// ---------------------------------------------------------------------------

void write_trace(const fs::path& path, const HarmonizeTrace& trace) {
    std::string out = "iteration\tncc\tmasked_tv\tlatent_norm\tdistance\n";
    for (const auto& r : trace.records) {
        char line[160];
        std::snprintf(line, sizeof(line), "%d\t%.9g\t%.9g\t%.9g\t%.9g\n", r.iteration,
                      r.ncc_to_source, r.masked_tv, r.latent_norm, r.distance);
        out += line;
    }
    iodet::spit(path, out);
}

int cmd_harmonize(const std::string& ckpt, const std::string& source_dir,
                  const std::string& mean_path, const std::string& config_path,
                  const std::string& out_dir, const std::string& trace_dir) {
    require_file(ckpt, "--ckpt checkpoint");
    require_dir(source_dir, "--source directory");
    require_file(mean_path, "--mean-image file");
    require_file(config_path, "--config file");

    FlowModel model = load_checkpoint(ckpt);
    ImageGrid mean = read_image(mean_path);
    HarmonizeConfig cfg = load_run_config(config_path).harmonize;
    cfg.validate();

    auto files = list_dataset_files(source_dir);
    if (files.empty()) throw IoError("no images in " + source_dir);
    fs::create_directories(out_dir);
    if (!trace_dir.empty()) fs::create_directories(trace_dir);

    std::vector<ImageGrid> sources;
    sources.reserve(files.size());
    for (const auto& f : files) sources.push_back(minmax_normalize(read_image(f)));

    auto items = harmonize_batch(model, sources, mean, cfg);
    std::size_t ok = 0;
    for (std::size_t i = 0; i < items.size(); ++i) {
        if (!items[i].ok()) {
            std::cerr << "failed " << files[i].filename().string() << ": " << items[i].error
                      << "\n";
            continue;
        }
        ++ok;
        write_image(fs::path(out_dir) / files[i].filename(), items[i].result->image);
        if (!trace_dir.empty()) {
            fs::path tp = fs::path(trace_dir) / files[i].filename();
            tp.replace_extension(".trace.tsv");
            write_trace(tp, items[i].result->trace);
        }
    }
    std::cout << "harmonized " << ok << "/" << files.size() << " images\n";
    return ok == 0 ? 5 : 0;
}

// ---------------------------------------------------------------------------

struct ManifestRow {
    std::string domain;
    fs::path source, target;
    std::map<std::string, fs::path> methods;
};

std::vector<ManifestRow> read_manifest(const std::string& path,
                                       std::vector<std::string>& method_cols) {
    std::string text = iodet::slurp(path);
    fs::path base = fs::path(path).parent_path();
    std::istringstream ss(text);
    std::string line;
    if (!std::getline(ss, line)) throw IoError("manifest is empty: " + path);
    if (!line.empty() && line.back() == '\r') line.pop_back();
    std::vector<std::string> cols;
    {
        std::stringstream hs(line);
        std::string c;
        while (std::getline(hs, c, '\t')) cols.push_back(c);
    }
    if (cols.size() < 3 || cols[0] != "domain" || cols[1] != "source" || cols[2] != "target") {
        throw IoError("manifest header must start with: domain\tsource\ttarget");
    }
    method_cols.assign(cols.begin() + 3, cols.end());

    auto resolve = [&](const std::string& p) {
        fs::path fp(p);
        return fp.is_absolute() ? fp : base / fp;
    };
    std::vector<ManifestRow> rows;
    int lineno = 1;
    while (std::getline(ss, line)) {
        ++lineno;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        std::vector<std::string> parts;
        std::stringstream ls(line);
        std::string c;
        while (std::getline(ls, c, '\t')) parts.push_back(c);
        if (parts.size() != cols.size()) {
            throw IoError("manifest line " + std::to_string(lineno) + ": expected " +
                          std::to_string(cols.size()) + " columns, got " +
                          std::to_string(parts.size()));
        }
        ManifestRow r;
        r.domain = parts[0];
        r.source = resolve(parts[1]);
        r.target = resolve(parts[2]);
        for (std::size_t m = 0; m < method_cols.size(); ++m) {
            r.methods[method_cols[m]] = resolve(parts[3 + m]);
        }
        rows.push_back(std::move(r));
    }
    if (rows.empty()) throw IoError("manifest has no data rows: " + path);
    return rows;
}

int cmd_evaluate(const std::string& pairs_path, const std::string& methods_list,
                 const std::string& out_path) {
    require_file(pairs_path, "--pairs manifest");
    std::vector<std::string> manifest_methods;
    auto rows = read_manifest(pairs_path, manifest_methods);

    std::vector<std::string> wanted = split_list(methods_list);
    for (const auto& m : wanted) {
        if (std::find(manifest_methods.begin(), manifest_methods.end(), m) ==
            manifest_methods.end()) {
            throw IoError("method '" + m + "' is not a column of the manifest");
        }
    }

    // group rows by domain in first-appearance order
    std::vector<std::string> domain_order;
    std::map<std::string, std::vector<const ManifestRow*>> grouped;
    for (const auto& r : rows) {
        if (!grouped.count(r.domain)) domain_order.push_back(r.domain);
        grouped[r.domain].push_back(&r);
    }

    std::vector<DomainSet> domains;
    std::vector<std::map<std::string, std::vector<ImageGrid>>> method_images;
    for (const auto& dname : domain_order) {
        DomainSet d;
        d.name = dname;
        std::map<std::string, std::vector<ImageGrid>> mi;
        for (const ManifestRow* r : grouped[dname]) {
            d.sources.push_back(read_image(r->source));
            d.targets.push_back(read_image(r->target));
            for (const auto& m : wanted) mi[m].push_back(read_image(r->methods.at(m)));
        }
        domains.push_back(std::move(d));
        method_images.push_back(std::move(mi));
    }

    std::vector<NamedMethod> methods;
    for (const auto& mname : wanted) {
        methods.push_back({mname, nullptr}); // resolved per domain below
    }

    // evaluate() applies a method uniformly across domains; bind the
    // file-backed lookups by (method, domain) via a per-domain evaluate call
    // and merge method-major.
    std::vector<EvalRow> all_rows;
    std::vector<EvalReport> per_domain;
    for (std::size_t di = 0; di < domains.size(); ++di) {
        std::vector<NamedMethod> bound;
        for (const auto& mname : wanted) {
            const auto& imgs = method_images[di].at(mname);
            bound.push_back({mname, [&imgs](const ImageGrid&, std::size_t i) {
                                 return imgs[i];
                             }});
        }
        per_domain.push_back(evaluate(bound, {domains[di]}));
    }
    // merge: for each method (Source first), for each domain
    std::size_t methods_per_domain = wanted.size() + 1;
    EvalReport rep;
    for (std::size_t m = 0; m < methods_per_domain; ++m) {
        for (std::size_t di = 0; di < domains.size(); ++di) {
            rep.rows.push_back(per_domain[di].rows[m]);
        }
    }
    iodet::spit(out_path, to_tsv(rep));
    std::cout << "wrote report with " << rep.rows.size() << " rows to " << out_path << "\n";
    return 0;
}

// ---------------------------------------------------------------------------

int cmd_sweep(const std::string& param, const std::string& values_list,
              const std::string& ckpt, const std::string& source_dir,
              const std::string& target_dir, const std::string& mean_path,
              const std::string& config_path, std::string domain_name,
              const std::string& out_path) {
    static const std::vector<std::string> kSweepable = {"alpha", "beta1", "beta2",
                                                        "iterations", "mask_quantile"};
    if (std::find(kSweepable.begin(), kSweepable.end(), param) == kSweepable.end()) {
        std::string names;
        for (const auto& s : kSweepable) names += (names.empty() ? "" : ", ") + s;
        throw ConfigError("unknown sweep param '" + param + "'; sweepable: " + names);
    }
    std::vector<double> values;
    for (const auto& tok : split_list(values_list)) {
        values.push_back(iodet::parse_real("--values", tok));
    }
    if (values.empty()) throw ConfigError("--values is empty");

    require_file(ckpt, "--ckpt checkpoint");
    require_dir(source_dir, "--source directory");
    require_dir(target_dir, "--target directory");
    require_file(mean_path, "--mean-image file");

    FlowModel model = load_checkpoint(ckpt);
    ImageGrid mean = read_image(mean_path);
    HarmonizeConfig base;
    if (!config_path.empty()) {
        require_file(config_path, "--config file");
        base = load_run_config(config_path).harmonize;
    }
    if (domain_name.empty()) {
        domain_name = fs::path(source_dir).filename().string();
        if (domain_name.empty()) domain_name = "domain";
    }

    auto sfiles = list_dataset_files(source_dir);
    auto tfiles = list_dataset_files(target_dir);
    if (sfiles.size() != tfiles.size() || sfiles.empty()) {
        throw IoError("source/target directories must hold matched image lists");
    }
    DomainSet dom;
    dom.name = domain_name;
    for (std::size_t i = 0; i < sfiles.size(); ++i) {
        dom.sources.push_back(minmax_normalize(read_image(sfiles[i])));
        dom.targets.push_back(minmax_normalize(read_image(tfiles[i])));
    }

    std::string out = "param_value\t";
    out += kReportHeader;
    out += '\n';
    for (double v : values) {
        HarmonizeConfig cfg = base;
        if (param == "alpha") cfg.alpha = v;
        else if (param == "beta1") cfg.beta1 = v;
        else if (param == "beta2") cfg.beta2 = v;
        else if (param == "mask_quantile") cfg.mask_quantile = v;
        else if (param == "iterations") {
            if (v < 1.0 || v != std::floor(v)) {
                throw ConfigError("iterations sweep values must be positive integers");
            }
            cfg.iterations = static_cast<int>(v);
        }
        cfg.validate();

        auto items = harmonize_batch(model, dom.sources, mean, cfg);
        std::vector<ImageGrid> harmonized;
        for (std::size_t i = 0; i < items.size(); ++i) {
            if (!items[i].ok()) {
                throw NumericError("sweep: harmonization failed for " +
                                   sfiles[i].filename().string() + ": " + items[i].error);
            }
            harmonized.push_back(items[i].result->image);
        }
        NamedMethod method{"BlindHarmony", [&harmonized](const ImageGrid&, std::size_t i) {
                               return harmonized[i];
                           }};
        EvalReport rep = evaluate({method}, {dom});
        char vbuf[32];
        std::snprintf(vbuf, sizeof(vbuf), "%g", v);
        std::string tsv = to_tsv(rep);
        std::size_t pos = tsv.find('\n') + 1; // drop the header
        while (pos < tsv.size()) {
            std::size_t eol = tsv.find('\n', pos);
            out += vbuf;
            out += '\t';
            out += tsv.substr(pos, eol - pos + 1);
            pos = eol + 1;
        }
    }
    iodet::spit(out_path, out);
    std::cout << "wrote sweep report (" << values.size() << " blocks) to " << out_path
              << "\n";
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"blind MR-image harmonization via a flow-based target-domain prior"};
    app.require_subcommand(1);

    // train
    auto* train_cmd = app.add_subcommand("train", "train the flow prior on a target dataset");
    std::string tr_data, tr_config, tr_out;
    std::uint64_t tr_seed = 0;
    train_cmd->add_option("--data", tr_data, "target-domain image directory")->required();
    train_cmd->add_option("--config", tr_config, "run configuration file")->required();
    train_cmd->add_option("--out", tr_out, "output checkpoint path")->required();
    auto* tr_seed_opt = train_cmd->add_option("--seed", tr_seed, "training seed (default 0)");

    // sample
    auto* sample_cmd = app.add_subcommand("sample", "draw images from a trained prior");
    std::string sa_ckpt, sa_out;
    int sa_n = 16;
    double sa_temp = 1.0;
    std::uint64_t sa_seed = 0;
    sample_cmd->add_option("--ckpt", sa_ckpt, "checkpoint file")->required();
    sample_cmd->add_option("--n", sa_n, "number of samples")->required();
    sample_cmd->add_option("--temperature", sa_temp, "sampling temperature")->required();
    sample_cmd->add_option("--seed", sa_seed, "sampling seed (default 0)");
    sample_cmd->add_option("--out", sa_out, "output directory")->required();

    // simulate
    auto* sim_cmd = app.add_subcommand("simulate", "fabricate a simulated source domain");
    std::string si_data, si_transform, si_out;
    double si_gamma = 0.7, si_eps = 0.01;
    sim_cmd->add_option("--data", si_data, "input image directory")->required();
    sim_cmd->add_option("--transform", si_transform, "exp|log|gamma")->required();
    auto* si_gamma_opt = sim_cmd->add_option("--gamma-power", si_gamma, "gamma exponent");
    sim_cmd->add_option("--log-epsilon", si_eps, "log transform epsilon (default 0.01)");
    sim_cmd->add_option("--out", si_out, "output directory")->required();

    // harmonize
    auto* harm_cmd = app.add_subcommand("harmonize", "harmonize a source-domain directory");
    std::string ha_ckpt, ha_source, ha_mean, ha_config, ha_out, ha_trace;
    harm_cmd->add_option("--ckpt", ha_ckpt, "checkpoint file")->required();
    harm_cmd->add_option("--source", ha_source, "source image directory")->required();
    harm_cmd->add_option("--mean-image", ha_mean, "training mean image file")->required();
    harm_cmd->add_option("--config", ha_config, "run configuration file")->required();
    harm_cmd->add_option("--out", ha_out, "output directory")->required();
    harm_cmd->add_option("--trace", ha_trace, "optional per-image trace directory");

    // evaluate
    auto* eval_cmd = app.add_subcommand("evaluate", "score harmonized outputs against targets");
    std::string ev_pairs, ev_methods, ev_out;
    eval_cmd->add_option("--pairs", ev_pairs, "pairing manifest (TSV)")->required();
    eval_cmd->add_option("--methods", ev_methods, "comma-separated manifest method columns")
        ->required();
    eval_cmd->add_option("--out", ev_out, "output report path")->required();

    // sweep
    auto* sweep_cmd = app.add_subcommand("sweep", "hyperparameter sweep of harmonize+evaluate");
    std::string sw_param, sw_values, sw_ckpt, sw_source, sw_target, sw_mean, sw_config,
        sw_domain, sw_out;
    sweep_cmd->add_option("--param", sw_param, "hyperparameter to sweep")->required();
    sweep_cmd->add_option("--values", sw_values, "comma-separated values")->required();
    sweep_cmd->add_option("--ckpt", sw_ckpt, "checkpoint file")->required();
    sweep_cmd->add_option("--source", sw_source, "source image directory")->required();
    sweep_cmd->add_option("--target", sw_target, "matched target directory")->required();
    sweep_cmd->add_option("--mean-image", sw_mean, "training mean image file")->required();
    sweep_cmd->add_option("--config", sw_config, "optional base configuration file");
    sweep_cmd->add_option("--domain", sw_domain, "domain label (default: source dir name)");
    sweep_cmd->add_option("--out", sw_out, "output report path")->required();

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        std::cerr << app.help() << "\n";
        return 2;
    }

    try {
        if (*train_cmd) {
            return cmd_train(tr_data, tr_config, tr_out, tr_seed_opt->count() > 0, tr_seed);
        }
        if (*sample_cmd) return cmd_sample(sa_ckpt, sa_n, sa_temp, sa_seed, sa_out);
        if (*sim_cmd) {
            return cmd_simulate(si_data, si_transform, si_gamma, si_gamma_opt->count() > 0,
                                si_eps, si_out);
        }
        if (*harm_cmd) {
            return cmd_harmonize(ha_ckpt, ha_source, ha_mean, ha_config, ha_out, ha_trace);
        }
        if (*eval_cmd) return cmd_evaluate(ev_pairs, ev_methods, ev_out);
        if (*sweep_cmd) {
            return cmd_sweep(sw_param, sw_values, sw_ckpt, sw_source, sw_target, sw_mean,
                             sw_config, sw_domain, sw_out);
        }
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << "\n";
        return 2;
    } catch (const IoError& e) {
        std::cerr << "I/O error: " << e.what() << "\n";
        return 3;
    } catch (const NumericError& e) {
        std::cerr << "numerical abort: " << e.what() << "\n";
        return 4;
    } catch (const InvalidInputError& e) {
        std::cerr << "data error: " << e.what() << "\n";
        return 3;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 3;
    }
    return 2;
}
