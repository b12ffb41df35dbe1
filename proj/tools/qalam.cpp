// qalam: command-line front end for training, evaluating and serving the
// handwritten Arabic character recognizer.
//
// Exit codes: 0 success, 2 usage error, 3 data or model-file error, 4 other failure.

#include "qalam/metrics.hpp"
#include "qalam/serialize.hpp"
#include "qalam/service.hpp"
#include "qalam/strokes.hpp"
#include "qalam/synthetic.hpp"
#include "qalam/train.hpp"

#include "CLI11.hpp"

#include <algorithm>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <numeric>
#include <thread>

namespace {

constexpr int exit_usage = 2;
constexpr int exit_data = 3;
constexpr int exit_failure = 4;

struct usage_error : std::runtime_error {
    using std::runtime_error::runtime_error;
};

const qalam::label_map &labels_for(const std::size_t classes) {
    switch (classes) {
        case 29:
            return qalam::hijja_labels();
        case 28:
            return qalam::ahcd_labels();
        case 8:
            return qalam::glyph_labels();
        default:
            throw usage_error{ "--classes must be 29 (Hijja), 28 (AHCD) or 8 (synthetic glyphs)" };
    }
}

qalam::provenance origin_for(const std::size_t classes) {
    switch (classes) {
        case 29:
            return qalam::provenance::hijja;
        case 28:
            return qalam::provenance::ahcd;
        case 8:
            return qalam::provenance::synthetic;
        default:
            return qalam::provenance::custom;
    }
}

std::size_t thread_cap(std::size_t wanted) {
    if (wanted == 0) {
        wanted = std::max(1U, std::thread::hardware_concurrency());
    }
    if (const char *env = std::getenv("QALAM_THREADS")) {
        try {
            const auto cap = static_cast<std::size_t>(std::stoul(env));
            if (cap > 0) {
                wanted = std::min(wanted, cap);
            }
        } catch (const std::exception &) {
            throw usage_error{ std::string{ "QALAM_THREADS is not a positive integer: " } + env };
        }
    }
    return wanted;
}

void print_summary(const qalam::dataset &ds) {
    std::cout << ds.size() << " samples, " << ds.labels.size() << " classes (" << qalam::to_string(ds.origin) << ")\n";
    const auto counts = qalam::class_counts(ds);
    for (std::size_t c = 0; c < counts.size(); ++c) {
        std::cout << "  " << std::setw(3) << c << "  " << qalam::detail::pad_right(ds.labels.name(c), 12) << std::setw(7) << counts[c] << '\n';
    }
}

std::string describe(const qalam::train_config &t) {
    std::ostringstream out;
    out << "folds=" << t.folds << " shuffle=" << (t.shuffle ? 1 : 0) << " batch=" << t.batch_size << " epochs=" << t.epochs << " lr=" << t.learning_rate
        << " lr_decay=" << t.lr_decay << " seed=" << t.seed << " threads=" << t.threads;
    return out.str();
}

void log_epoch(const qalam::epoch_stats &s) {
    std::clog << "fold " << s.fold + 1 << " epoch " << s.epoch << ": lr=" << s.learning_rate << " loss=" << s.mean_loss
              << " val_acc=" << std::fixed << std::setprecision(4) << s.validation_accuracy << std::defaultfloat << '\n';
}

struct data_flags {
    std::string path;
    bool header{ false };
    bool transpose{ false };

    void attach(CLI::App &app, const std::string &name, const std::string &help) {
        app.add_option(name, path, help)->required()->check(CLI::ExistingFile);
        app.add_flag("--header", header, "Input CSV starts with a header row");
        app.add_flag("--transpose", transpose, "Input pixels are stored column-major");
    }

    [[nodiscard]] qalam::dataset load(const qalam::label_map &labels, const qalam::provenance origin) const {
        return qalam::load_csv(path, qalam::csv_options{ transpose, header }, labels, origin);
    }
};

struct training_flags {
    std::size_t classes{ 29 };
    std::string test_path;
    qalam::train_config t;
    bool quick{ false };
    CLI::Option *epochs{ nullptr };

    void attach(CLI::App &app) {
        app.add_option("--classes", classes, "Class count: 29, 28 or 8")->capture_default_str();
        app.add_option("--test", test_path, "Held-out test CSV; without it a stratified 10% is held out")->check(CLI::ExistingFile);
        app.add_option("--folds", t.folds, "Cross-validation folds")->capture_default_str();
        epochs = app.add_option("--epochs", t.epochs, "Epochs per fold")->capture_default_str();
        app.add_option("--batch", t.batch_size, "Mini-batch size")->capture_default_str();
        app.add_option("--lr", t.learning_rate, "Adam learning rate")->capture_default_str();
        app.add_option("--lr-decay", t.lr_decay, "Per-epoch lr exponent (0 disables)")->capture_default_str();
        app.add_option("--seed", t.seed, "Seed for splits, init, shuffling and dropout")->capture_default_str();
        app.add_option("--threads", t.threads, "Folds trained concurrently (0 = all cores)")->capture_default_str();
        app.add_flag("--no-shuffle", [this](std::int64_t) { t.shuffle = false; }, "Do not shuffle before splitting");
        app.add_flag("--quick", quick, "Desk-scale run: 8/16/24/32 filters and 3 epochs");
    }

    [[nodiscard]] qalam::network_config network(const std::size_t k) {
        if (quick && epochs->count() == 0) {
            t.epochs = 3;
        }
        t.threads = thread_cap(t.threads);
        t.validate();
        return quick ? qalam::network_config::quick(k) : qalam::network_config::full(k);
    }

    /// Loads the optional test file or carves a stratified 10% hold-out.
    [[nodiscard]] std::pair<qalam::dataset, qalam::dataset> split(qalam::dataset all, const data_flags &data) const {
        if (!test_path.empty()) {
            auto test = qalam::load_csv(test_path, qalam::csv_options{ data.transpose, data.header }, all.labels, all.origin);
            return { std::move(all), std::move(test) };
        }
        std::clog << "no --test file: holding out a stratified 10% (seed " << t.seed << ")\n";
        return qalam::stratified_split(all, 0.1, t.seed);
    }
};

void write_fold_log(const std::string &path, const qalam::trained_bundle &b) {
    std::ofstream out{ path };
    if (!out) {
        throw qalam::data_error{ "cannot write " + path };
    }
    out << "fold,validation_accuracy,kept\n";
    for (std::size_t f = 0; f < b.fold_accuracies.size(); ++f) {
        out << f + 1 << ',' << b.fold_accuracies[f] << ',' << (f == b.best_fold ? 1 : 0) << '\n';
    }
}

std::vector<std::uint32_t> truth_of(const qalam::dataset &ds) {
    std::vector<std::uint32_t> y;
    y.reserve(ds.size());
    for (const auto &s : ds.samples) {
        y.push_back(s.label);
    }
    return y;
}

qalam::classification_report evaluate(const qalam::trained_bundle &m, const qalam::dataset &test) {
    const auto predicted = qalam::predict_labels(m.net, test);
    const std::vector<std::uint32_t> pred(predicted.begin(), predicted.end());
    return qalam::report(truth_of(test), pred, m.labels);
}

void print_top(const std::vector<std::string> &names, const std::vector<double> &probabilities, const std::size_t n) {
    std::vector<std::size_t> order(probabilities.size());
    std::iota(order.begin(), order.end(), 0);
    std::stable_sort(order.begin(), order.end(), [&](const std::size_t a, const std::size_t b) { return probabilities[a] > probabilities[b]; });
    for (std::size_t i = 0; i < std::min(n, order.size()); ++i) {
        std::cout << "  " << qalam::detail::pad_right(names[order[i]], 12) << std::fixed << std::setprecision(4) << probabilities[order[i]] << std::defaultfloat << '\n';
    }
}

}  // namespace

int main(int argc, char **argv) {
    CLI::App app{ "Handwritten Arabic character recognition" };
    app.require_subcommand(1);
    app.set_version_flag("--version", "qalam model format " + std::to_string(qalam::model_format_version));

    // preprocess
    auto *preprocess = app.add_subcommand("preprocess", "Rewrite a CSV in the canonical layout, optionally transposed and inverted");
    data_flags pre_in;
    std::string pre_out;
    bool pre_invert = false;
    std::size_t pre_classes = 29;
    pre_in.attach(*preprocess, "--input", "Input CSV");
    preprocess->add_option("--output", pre_out, "Output CSV")->required();
    preprocess->add_flag("--invert", pre_invert, "Invert colours (255 - v)");
    preprocess->add_option("--classes", pre_classes, "Class count: 29, 28 or 8")->capture_default_str();

    // merge
    auto *merge = app.add_subcommand("merge", "Merge a 29-class and a 28-class set into the 29-class label space");
    std::string merge_a;
    std::string merge_b;
    std::string merge_out;
    merge->add_option("--hijja", merge_a, "Canonical 29-class CSV")->required()->check(CLI::ExistingFile);
    merge->add_option("--ahcd", merge_b, "Canonical 28-class CSV")->required()->check(CLI::ExistingFile);
    merge->add_option("--output", merge_out, "Output CSV")->required();

    // train
    auto *train = app.add_subcommand("train", "Cross-validated training of one model");
    data_flags train_data;
    training_flags train_flags;
    std::string train_out;
    train_data.attach(*train, "--data", "Training CSV");
    train_flags.attach(*train);
    train->add_option("--out", train_out, "Model file to write")->required();

    // train-multi
    auto *train_multi = app.add_subcommand("train-multi", "Train one model per stroke group");
    data_flags multi_data;
    training_flags multi_flags;
    std::string multi_out;
    multi_data.attach(*train_multi, "--data", "29-class training CSV");
    multi_flags.attach(*train_multi);
    train_multi->add_option("--out", multi_out, "Directory for the group models")->required();

    // eval
    auto *eval = app.add_subcommand("eval", "Per-class report of a model on a labelled CSV");
    data_flags eval_data;
    std::string eval_model;
    std::string eval_csv;
    eval_data.attach(*eval, "--data", "Test CSV");
    eval->add_option("--model", eval_model, "Model file")->required()->check(CLI::ExistingFile);
    eval->add_option("--csv", eval_csv, "Also write the report as CSV");

    // eval-multi
    auto *eval_multi = app.add_subcommand("eval-multi", "Per-group reports and the averaged accuracy");
    data_flags eval_multi_data;
    std::string eval_multi_models;
    eval_multi_data.attach(*eval_multi, "--data", "29-class test CSV");
    eval_multi->add_option("--models", eval_multi_models, "Directory of group models")->required()->check(CLI::ExistingDirectory);

    // predict
    auto *predict = app.add_subcommand("predict", "Classify every row of a canonical CSV");
    data_flags predict_data;
    std::string predict_model;
    std::string predict_models;
    int predict_strokes = 0;
    predict_data.attach(*predict, "--input", "CSV of images; the label column must be a valid class index");
    auto *single_opt = predict->add_option("--model", predict_model, "Single model file")->check(CLI::ExistingFile);
    auto *multi_opt = predict->add_option("--models", predict_models, "Directory of group models")->check(CLI::ExistingDirectory);
    auto *strokes_opt = predict->add_option("--strokes", predict_strokes, "Stroke count used to route to a group model");
    single_opt->excludes(multi_opt);
    multi_opt->needs(strokes_opt);
    strokes_opt->needs(multi_opt);

    // groups
    auto *groups = app.add_subcommand("groups", "Print the stroke-group table");
    bool groups_json = false;
    groups->add_flag("--json", groups_json, "Print as JSON");

    // serve
    auto *serve = app.add_subcommand("serve", "Start the HTTP inference service");
    std::string serve_model;
    std::string serve_models;
    std::string serve_host = "127.0.0.1";
    int serve_port = 8080;
    serve->add_option("--model", serve_model, "Single model file")->check(CLI::ExistingFile);
    serve->add_option("--models", serve_models, "Directory of group models")->check(CLI::ExistingDirectory);
    serve->add_option("--host", serve_host, "Bind address")->capture_default_str();
    serve->add_option("--port", serve_port, "Port")->capture_default_str()->check(CLI::Range(0, 65535));

    try {
        app.parse(argc, argv);
    } catch (const CLI::ParseError &e) {
        const int code = app.exit(e);
        return code == 0 ? 0 : exit_usage;
    }

    try {
        if (preprocess->parsed()) {
            auto ds = pre_in.load(labels_for(pre_classes), origin_for(pre_classes));
            if (pre_invert) {
                ds = qalam::invert(std::move(ds));
            }
            qalam::write_csv(pre_out, ds);
            print_summary(ds);
        } else if (merge->parsed()) {
            const auto a = qalam::load_csv(merge_a, {}, qalam::hijja_labels(), qalam::provenance::hijja);
            const auto b = qalam::load_csv(merge_b, {}, qalam::ahcd_labels(), qalam::provenance::ahcd);
            const auto merged = qalam::merge(a, b);
            qalam::write_csv(merge_out, merged);
            print_summary(merged);
        } else if (train->parsed()) {
            const auto &labels = labels_for(train_flags.classes);
            const auto ncfg = train_flags.network(labels.size());
            std::clog << "train: " << describe(train_flags.t) << '\n' << "network: " << ncfg.to_text() << '\n';
            const auto [train_set, test_set] = train_flags.split(train_data.load(labels, origin_for(train_flags.classes)), train_data);
            const auto bundle = qalam::train(train_set, train_flags.t, ncfg, log_epoch);
            qalam::save_bundle(train_out, bundle);
            write_fold_log(train_out + ".folds.csv", bundle);
            for (std::size_t f = 0; f < bundle.fold_accuracies.size(); ++f) {
                std::cout << "fold " << f + 1 << " validation accuracy " << std::fixed << std::setprecision(4) << bundle.fold_accuracies[f] << (f == bundle.best_fold ? "  (kept)" : "") << '\n';
            }
            const auto r = evaluate(bundle, test_set);
            std::cout << qalam::render_report(r) << "test accuracy " << std::fixed << std::setprecision(4) << r.accuracy << '\n';
        } else if (train_multi->parsed()) {
            if (multi_flags.classes != 29) {
                throw usage_error{ "train-multi needs the 29-class label space" };
            }
            const auto ncfg = multi_flags.network(29);
            std::clog << "train-multi: " << describe(multi_flags.t) << '\n' << "network: " << ncfg.to_text() << '\n';
            const auto [train_set, test_set] = multi_flags.split(multi_data.load(qalam::hijja_labels(), qalam::provenance::hijja), multi_data);
            const auto bundle = qalam::train_multi(train_set, multi_flags.t, ncfg, qalam::stroke_group_table::standard(), log_epoch);
            qalam::save_multi(multi_out, bundle);
            const auto result = qalam::evaluate_multi(bundle, test_set);
            for (const auto &g : result.groups) {
                std::cout << "group " << g.group << " test accuracy " << std::fixed << std::setprecision(4) << g.report.accuracy << '\n';
            }
            std::cout << "averaged accuracy " << std::fixed << std::setprecision(4) << result.averaged_accuracy << '\n';
        } else if (eval->parsed()) {
            const auto model = qalam::load_bundle(eval_model);
            const auto test = eval_data.load(model.labels, qalam::provenance::custom);
            const auto r = evaluate(model, test);
            std::cout << qalam::render_report(r);
            for (const auto &w : r.warnings) {
                std::clog << "warning: " << w << '\n';
            }
            if (!eval_csv.empty()) {
                std::ofstream out{ eval_csv };
                if (!out) {
                    throw qalam::data_error{ "cannot write " + eval_csv };
                }
                out << qalam::render_delimited(r);
            }
        } else if (eval_multi->parsed()) {
            const auto bundle = qalam::load_multi(eval_multi_models);
            const auto test = eval_multi_data.load(qalam::hijja_labels(), qalam::provenance::hijja);
            const auto result = qalam::evaluate_multi(bundle, test);
            for (const auto &g : result.groups) {
                const auto &group = bundle.table.route(g.group);
                std::cout << "group " << g.group << " (" << group.classes.size() << " classes)\n" << qalam::render_report(g.report) << '\n';
            }
            std::cout << "averaged accuracy " << std::fixed << std::setprecision(4) << result.averaged_accuracy << '\n'
                      << "weighted accuracy " << result.weighted_accuracy << '\n';
        } else if (predict->parsed()) {
            if (predict_model.empty() && predict_models.empty()) {
                throw usage_error{ "predict needs --model, or --models with --strokes" };
            }
            if (!predict_model.empty()) {
                const auto model = qalam::load_bundle(predict_model);
                const auto in = predict_data.load(model.labels, qalam::provenance::custom);
                for (std::size_t i = 0; i < in.size(); ++i) {
                    const auto p = qalam::predict(model.net, in.samples[i].pixels);
                    std::cout << "row " << i << ": " << model.labels.name(p.label) << '\n';
                    print_top(model.labels.names(), p.probabilities, 5);
                }
            } else {
                const auto bundle = qalam::load_multi(predict_models);
                const auto in = predict_data.load(bundle.table.labels(), qalam::provenance::custom);
                for (std::size_t i = 0; i < in.size(); ++i) {
                    const auto p = qalam::predict_multi(bundle, in.samples[i].pixels, predict_strokes);
                    std::cout << "row " << i << ": " << p.name << " (group " << p.group << ")\n";
                    print_top(p.classes, p.probabilities, 5);
                }
            }
        } else if (groups->parsed()) {
            if (groups_json) {
                const qalam::service::inference_service svc;
                std::cout << svc.groups().body.dump(2) << '\n';
            } else {
                std::cout << qalam::stroke_group_table::standard().render();
            }
        } else if (serve->parsed()) {
            qalam::service::inference_service svc;
            httplib::Server server;
            qalam::service::install_routes(server, svc);
            const int port = serve_port == 0 ? server.bind_to_any_port(serve_host) : (server.bind_to_port(serve_host, serve_port) ? serve_port : -1);
            if (port < 0) {
                throw qalam::error{ "cannot bind " + serve_host + ":" + std::to_string(serve_port) };
            }
            std::thread loop{ [&server] { server.listen_after_bind(); } };
            std::clog << "listening on http://" << serve_host << ':' << port << '\n';
            try {
                if (!serve_model.empty()) {
                    svc.set_single(qalam::load_bundle(serve_model));
                }
                if (!serve_models.empty()) {
                    svc.set_multi(qalam::load_multi(serve_models));
                }
            } catch (...) {
                server.stop();
                loop.join();
                throw;
            }
            svc.mark_ready();
            std::clog << "ready\n";
            loop.join();
        }
    } catch (const usage_error &e) {
        std::cerr << "usage: " << e.what() << '\n';
        return exit_usage;
    } catch (const qalam::data_error &e) {
        std::cerr << "data error: " << e.what() << '\n';
        return exit_data;
    } catch (const qalam::format_error &e) {
        std::cerr << "model file error: " << e.what() << '\n';
        return exit_data;
    } catch (const qalam::routing_error &e) {
        std::cerr << "routing error: " << e.what() << '\n';
        return exit_data;
    } catch (const std::exception &e) {
        std::cerr << "error: " << e.what() << '\n';
        return exit_failure;
    }
    return 0;
}
