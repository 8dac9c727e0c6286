#include <CLI11.hpp>

#include <pthread.h>

#include <csignal>
#include <cstdlib>
#include <fstream>
#include <iomanip>
#include <iostream>
#include <set>
#include <sstream>

#include "triage/backend.hpp"
#include "triage/ddxplus.hpp"
#include "triage/engine.hpp"
#include "triage/errors.hpp"
#include "triage/eval.hpp"
#include "triage/random.hpp"
#include "triage/records.hpp"
#include "triage/service.hpp"
#include "triage/synthesis.hpp"
#include "triage/text.hpp"

namespace fs = std::filesystem;
using nlohmann::json;
using namespace triage;

namespace {

std::ifstream open_input(const fs::path& path) {
    std::ifstream in(path, std::ios::binary);
    if (!in) throw PreconditionViolation("cannot open " + path.string());
    return in;
}

EvidenceCatalog load_catalog(const fs::path& path) {
    auto in = open_input(path);
    return ddxplus::parse_evidence_catalog(in);
}

ddxplus::DepartmentMapping load_mapping(const fs::path& path) {
    auto in = open_input(path);
    return ddxplus::DepartmentMapping::parse(in);
}

// A dataset argument may be a directory holding conversations.jsonl.
fs::path conversations_file(const fs::path& in) {
    return fs::is_directory(in) ? in / "conversations.jsonl" : in;
}

std::string fixed3(double v) {
    std::ostringstream os;
    os << std::fixed << std::setprecision(3) << v;
    return os.str();
}

void write_json_file(const fs::path& path, const json& j) {
    AtomicOutputFile out(path);
    out.stream() << j.dump(2) << '\n';
    out.commit();
}

// ---- ingest ----------------------------------------------------------------

struct IngestArgs {
    std::string catalog, cases, mapping, out;
    std::size_t sample = 0;
    std::uint64_t seed = 0;
    bool lenient = false;
};

void run_ingest(const IngestArgs& a) {
    const auto catalog = load_catalog(a.catalog);
    const auto mapping = load_mapping(a.mapping);
    const auto mode = a.lenient ? ddxplus::ParseMode::Lenient : ddxplus::ParseMode::Strict;

    // Pass 1: stratum sizes only, so the case file is never held in memory.
    std::map<std::string, std::size_t> sizes;
    {
        auto in = open_input(a.cases);
        ddxplus::for_each_patient_case(in, catalog, mode, [&](PatientCase&& pc) { ++sizes[pc.pathology]; });
    }
    std::set<std::string> pathologies;
    for (const auto& [p, _] : sizes) pathologies.insert(p);
    mapping.ensure_total(pathologies);
    ddxplus::StratifiedSelector selector(sizes, {a.sample, a.seed, ddxplus::StratifyBy::Pathology});

    fs::create_directories(a.out);
    AtomicOutputFile cases_out(fs::path(a.out) / "cases.jsonl");
    std::map<std::string, std::size_t> ordinal;
    ddxplus::CaseParseReport report;
    {
        auto in = open_input(a.cases);
        report = ddxplus::for_each_patient_case(in, catalog, mode, [&](PatientCase&& pc) {
            if (selector.keep(pc.pathology, ordinal[pc.pathology]++)) write_jsonl_line(cases_out.stream(), to_json(pc));
        });
    }
    AtomicOutputFile catalog_out(fs::path(a.out) / "catalog.jsonl");
    ddxplus::write_evidence_catalog(catalog_out.stream(), catalog);
    AtomicOutputFile mapping_out(fs::path(a.out) / "mapping.tsv");
    for (const auto& [p, d] : mapping.entries()) mapping_out.stream() << p << '\t' << d.name() << '\n';
    std::optional<AtomicOutputFile> violations_out;
    if (a.lenient) {
        violations_out.emplace(fs::path(a.out) / "violations.jsonl");
        for (const auto& v : report.violations) {
            write_jsonl_line(violations_out->stream(), {{"row", v.row}, {"kind", v.kind}, {"code", v.code},
                                                        {"value", v.value}, {"message", v.message}});
        }
    }
    cases_out.commit();
    catalog_out.commit();
    mapping_out.commit();
    if (violations_out) violations_out->commit();

    std::cout << "rows_read " << report.rows_read << "\nrows_accepted " << report.rows_accepted << "\nsampled "
              << a.sample << "\nviolations " << report.violations.size() << '\n';
}

// ---- synthesize ------------------------------------------------------------

struct SynthArgs {
    std::string mode, in, bank, out, backend_config, granularity = "conversation";
    std::uint64_t seed = 0;
    std::string marker = std::string(synthesis::kDefaultMarker);
};

std::vector<PatientCase> load_cases(const fs::path& path) {
    auto in = open_input(path);
    std::vector<PatientCase> cases;
    std::string line;
    while (std::getline(in, line)) {
        if (text::is_blank(line)) continue;
        cases.push_back(patient_case_from_json(json::parse(line)));
    }
    return cases;
}

void run_synthesize(const SynthArgs& a) {
    if (a.mode != "raw" && a.mode != "artificial" && a.mode != "rewrite") {
        throw PreconditionViolation("--mode must be raw, artificial or rewrite");
    }
    const fs::path dir(a.in);
    const auto catalog = load_catalog(dir / "catalog.jsonl");
    const auto mapping = load_mapping(dir / "mapping.tsv");
    const auto cases = load_cases(dir / "cases.jsonl");

    synthesis::VariantBank bank;
    if (a.mode == "artificial") {
        if (a.bank.empty()) throw PreconditionViolation("--bank is required for mode " + a.mode);
        bank = synthesis::VariantBank::from_json(json::parse(read_file(a.bank)));
        bank.validate();
    }
    std::shared_ptr<backend::ChatBackend> llm;
    synthesis::SynthesisConfig cfg;
    cfg.seed = a.seed;
    cfg.marker = a.marker;
    if (a.mode == "rewrite") {
        if (a.backend_config.empty()) throw PreconditionViolation("--backend-config is required for mode rewrite");
        llm = backend::load_backend(a.backend_config);
        if (a.granularity == "turn") {
            cfg.granularity = synthesis::RewriteGranularity::TurnByTurn;
        } else if (a.granularity != "conversation") {
            throw PreconditionViolation("--granularity must be conversation or turn");
        }
    }

    fs::create_directories(a.out);
    AtomicOutputFile out(fs::path(a.out) / "conversations.jsonl");
    std::size_t fallbacks = 0;
    for (std::size_t i = 0; i < cases.size(); ++i) {
        Conversation conv;
        if (a.mode != "artificial") {
            conv = synthesis::render_raw_conversation(cases[i], catalog, mapping);
        } else {
            conv = synthesis::render_artificial_conversation(cases[i], catalog, bank, mapping,
                                                             rng::derive_seed(a.seed, i));
        }
        if (a.mode == "rewrite") {
            auto r = synthesis::rewrite_conversation_llm(conv, *llm, cfg);
            fallbacks += r.fallback_count;
            conv = std::move(r.conversation);
        }
        synthesis::ensure_marker_free(conv, cfg.marker);
        write_jsonl_line(out.stream(), to_json(conv));
    }
    out.commit();
    std::cout << "conversations " << cases.size() << '\n';
    if (a.mode == "rewrite") std::cout << "fallback_turns " << fallbacks << '\n';
}

// ---- format / stats --------------------------------------------------------

void run_format(const std::string& in, const std::string& marker, const std::string& out_path) {
    const auto convs = read_conversations(fs::path(conversations_file(in)));
    synthesis::SynthesisConfig cfg;
    cfg.marker = marker;
    AtomicOutputFile out(out_path);
    std::size_t samples = 0;
    for (const auto& conv : convs) {
        for (const auto& s : synthesis::format_training_samples(conv, cfg)) {
            write_jsonl_line(out.stream(), to_json(s));
            ++samples;
        }
    }
    out.commit();
    std::cout << "samples " << samples << '\n';
}

void run_stats(const std::string& in, const std::string& report, std::size_t bucket) {
    const auto convs = read_conversations(fs::path(conversations_file(in)));
    const auto stats = eval::compute_stats(convs, bucket);
    write_json_file(report, eval::to_json(stats));
    std::cout << "conversations " << stats.conversations << '\n';
}

// ---- evaluate --------------------------------------------------------------

eval::SplitSpec parse_split(const std::string& s, std::uint64_t seed) {
    const auto parts = text::split(s, ',');
    if (parts.size() != 3) throw PreconditionViolation("--split needs three comma-separated fractions");
    eval::SplitSpec spec;
    try {
        spec.train = std::stod(parts[0]);
        spec.test = std::stod(parts[1]);
        spec.validation = std::stod(parts[2]);
    } catch (const std::exception&) {
        throw PreconditionViolation("--split fractions must be numbers");
    }
    spec.seed = seed;
    spec.validate();
    return spec;
}

struct ClassifyArgs {
    std::string in, split = "0.7,0.2,0.1", predictions, report;
    std::uint64_t seed = 0;
    bool include_recommendation = false;
};

void run_classify(const ClassifyArgs& a) {
    const auto convs = read_conversations(fs::path(conversations_file(a.in)));
    const auto parts = eval::split_dataset(convs, parse_split(a.split, a.seed));
    const auto test = eval::labeled(parts.test);
    eval::EvalMetrics m;
    if (!a.predictions.empty()) {
        auto in = open_input(a.predictions);
        m = eval::evaluate_predictions(test, eval::read_predictions(in));
    } else {
        const auto model = eval::NaiveBayesClassifier::train(eval::labeled(parts.train), {a.include_recommendation});
        m = eval::evaluate_classifier(model, test);
    }
    if (!a.report.empty()) {
        auto j = eval::to_json(m);
        j["split"] = {{"train", parts.train.size()}, {"test", parts.test.size()},
                      {"validation", parts.validation.size()}};
        write_json_file(a.report, j);
    }
    std::cout << "train " << parts.train.size() << "\ntest " << parts.test.size() << "\nvalidation "
              << parts.validation.size() << "\naccuracy " << fixed3(m.accuracy) << "\nmacro_f1 " << fixed3(m.macro_f1)
              << '\n';
}

struct AspectArgs {
    std::string in, aspect, backend_config, report;
    std::size_t concurrency = 1;
};

void run_aspects(const AspectArgs& a) {
    const auto aspect = eval::parse_aspect(a.aspect);
    if (!aspect) throw PreconditionViolation("--aspect must be one of SPE, FLE, UND, INF, PAT, ACC");
    const auto convs = read_conversations(fs::path(conversations_file(a.in)));
    auto judge = backend::load_backend(a.backend_config);
    const auto score = eval::gptscore_evaluate(convs, *aspect, *judge, a.concurrency);
    if (!a.report.empty()) write_json_file(a.report, eval::to_json(score));
    std::ostringstream s;
    s << std::fixed << std::setprecision(2) << score.score;
    std::cout << eval::aspect_name(*aspect) << ' ' << s.str() << "\nevaluated " << score.n_evaluated << "\nexcluded "
              << score.excluded << '\n';
}

// ---- emit-config -----------------------------------------------------------

void run_emit_config(const std::string& out_path, const synthesis::TrainingConfigOverrides& o) {
    const auto cfg = synthesis::emit_training_config(o);
    AtomicOutputFile out(out_path);
    out.stream() << synthesis::serialize_training_config(cfg);
    out.commit();
}

// ---- serve / chat ----------------------------------------------------------

struct ServiceArgs {
    std::string backend_config, mapping = "data/departments.tsv", data_dir, cors_origin = "*", host = "127.0.0.1";
    int port = 0;
    bool in_memory = false;
};

std::shared_ptr<engine::SessionRegistry> make_registry(const ServiceArgs& a) {
    engine::EngineConfig cfg;
    cfg.departments = load_mapping(a.mapping).departments();
    if (cfg.departments.empty()) throw PreconditionViolation("department mapping is empty");
    std::shared_ptr<engine::SessionStore> store;
    if (a.in_memory || a.data_dir.empty()) {
        store = std::make_shared<engine::MemorySessionStore>();
    } else {
        store = std::make_shared<engine::FileSessionStore>(a.data_dir);
    }
    return std::make_shared<engine::SessionRegistry>(cfg, backend::load_backend(a.backend_config), store);
}

void run_serve(ServiceArgs a, bool port_given) {
    if (!port_given) {
        if (const char* env = std::getenv("PORT")) {
            try {
                a.port = std::stoi(env);
            } catch (const std::exception&) {
                throw PreconditionViolation("PORT must be an integer");
            }
        } else {
            a.port = 8080;
        }
    }
    // Block the stop signals before any server thread exists; the main
    // thread collects them with sigwait.
    sigset_t stop_signals;
    sigemptyset(&stop_signals);
    sigaddset(&stop_signals, SIGINT);
    sigaddset(&stop_signals, SIGTERM);
    pthread_sigmask(SIG_BLOCK, &stop_signals, nullptr);

    service::Server server(make_registry(a), {a.host, a.port, a.cors_origin});
    const int port = server.start();
    std::cout << "listening on http://" << a.host << ':' << port << std::endl;
    int sig = 0;
    sigwait(&stop_signals, &sig);
    server.stop();
}

void run_chat(const ServiceArgs& a) {
    auto registry = make_registry(a);
    auto s = registry->create();
    std::cout << "[Assistant] " << s.history.front().text << "\n(/summary shows the note, /quit exits)\n";
    std::string line;
    while (std::cout << "> " << std::flush, std::getline(std::cin, line)) {
        const auto cmd = text::trim(line);
        if (cmd == "/quit") break;
        try {
            if (cmd == "/summary") {
                std::cout << to_json(registry->summary(s.id)).dump(2) << '\n';
                continue;
            }
            const auto reply = registry->post_message(s.id, line);
            std::cout << "[Assistant] " << reply.text << '\n';
            if (reply.recommendation) {
                std::cout << "(recommended department: " << reply.recommendation->department.name() << ")\n";
            }
        } catch (const Error& e) {
            std::cout << "error: " << e.code() << ": " << e.what() << '\n';
        }
    }
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"Conversational triage toolkit: dataset pipelines, evaluation and the session service"};
    app.require_subcommand(1);

    IngestArgs ingest;
    auto* c_ingest = app.add_subcommand("ingest", "Sample DDXPlus cases into a working directory");
    c_ingest->add_option("--catalog", ingest.catalog, "Evidence catalog (JSONL or JSON object)")->required();
    c_ingest->add_option("--cases", ingest.cases, "Patient cases CSV")->required();
    c_ingest->add_option("--mapping", ingest.mapping, "pathology<TAB>department file")->required();
    c_ingest->add_option("--sample", ingest.sample, "Number of cases to keep")->required();
    c_ingest->add_option("--seed", ingest.seed, "Sampling seed");
    c_ingest->add_option("--out", ingest.out, "Output directory")->required();
    c_ingest->add_flag("--lenient", ingest.lenient, "Skip bad rows instead of failing");

    SynthArgs synth;
    auto* c_synth = app.add_subcommand("synthesize", "Render sampled cases as conversations");
    c_synth->add_option("--mode", synth.mode, "raw | artificial | rewrite")->required();
    c_synth->add_option("--in", synth.in, "Directory written by ingest")->required();
    c_synth->add_option("--bank", synth.bank, "Variant bank JSON (artificial mode)");
    c_synth->add_option("--out", synth.out, "Output directory")->required();
    c_synth->add_option("--seed", synth.seed, "Synthesis seed");
    c_synth->add_option("--backend-config", synth.backend_config, "Backend config for rewrite mode");
    c_synth->add_option("--granularity", synth.granularity, "conversation | turn (rewrite mode)");
    c_synth->add_option("--marker", synth.marker, "End-of-turn marker that must not appear in turns");

    std::string fmt_in, fmt_out, fmt_marker = std::string(synthesis::kDefaultMarker);
    auto* c_format = app.add_subcommand("format", "Decompose conversations into training samples");
    c_format->add_option("--in", fmt_in, "Conversations JSONL or dataset directory")->required();
    c_format->add_option("--marker", fmt_marker, "End-of-turn marker");
    c_format->add_option("--out", fmt_out, "Samples JSONL")->required();

    std::string stats_in, stats_report;
    std::size_t stats_bucket = 100;
    auto* c_stats = app.add_subcommand("stats", "Turn and token statistics");
    c_stats->add_option("--in", stats_in, "Conversations JSONL or dataset directory")->required();
    c_stats->add_option("--report", stats_report, "JSON report path")->required();
    c_stats->add_option("--bucket", stats_bucket, "Token histogram bucket width");

    auto* c_eval = app.add_subcommand("evaluate", "Evaluation harness");
    c_eval->require_subcommand(1);
    ClassifyArgs classify;
    auto* c_classify = c_eval->add_subcommand("classify", "Department classification on a stratified split");
    c_classify->add_option("--in", classify.in, "Conversations JSONL or dataset directory")->required();
    c_classify->add_option("--split", classify.split, "train,test,validation fractions");
    c_classify->add_option("--seed", classify.seed, "Split seed");
    c_classify->add_flag("--include-recommendation-turn", classify.include_recommendation,
                         "Keep turns that name the department");
    c_classify->add_option("--predictions", classify.predictions, "CSV of external predictions to score");
    c_classify->add_option("--report", classify.report, "JSON report path");
    AspectArgs aspects;
    auto* c_aspects = c_eval->add_subcommand("aspects", "Yes/no judge scoring for one aspect");
    c_aspects->add_option("--in", aspects.in, "Conversations JSONL or dataset directory")->required();
    c_aspects->add_option("--aspect", aspects.aspect, "SPE | FLE | UND | INF | PAT | ACC")->required();
    c_aspects->add_option("--backend-config", aspects.backend_config, "Judge backend config")->required();
    c_aspects->add_option("--concurrency", aspects.concurrency, "Parallel judge calls");
    c_aspects->add_option("--report", aspects.report, "JSON report path");

    std::string cfg_out;
    synthesis::TrainingConfigOverrides ov;
    int use_lora = -1;
    auto* c_cfg = app.add_subcommand("emit-config", "Write the fine-tuning hyperparameter file");
    c_cfg->add_option("--out", cfg_out, "Output JSON path")->required();
    c_cfg->add_option("--epochs", ov.num_train_epochs);
    c_cfg->add_option("--learning-rate", ov.learning_rate);
    c_cfg->add_option("--block-size", ov.block_size);
    c_cfg->add_option("--batch-size", ov.per_device_batch_size);
    c_cfg->add_option("--use-lora", use_lora, "1 or 0")->check(CLI::Range(0, 1));
    c_cfg->add_option("--lora-r", ov.lora_r);
    c_cfg->add_option("--precision", ov.precision, "bf16 | fp16 | fp32");
    c_cfg->add_option("--workers", ov.dataloader_num_workers);

    ServiceArgs serve;
    auto* c_serve = app.add_subcommand("serve", "Run the HTTP session service");
    auto* port_opt = c_serve->add_option("--port", serve.port, "Port (default $PORT or 8080; 0 = any)");
    c_serve->add_option("--host", serve.host, "Bind address");
    c_serve->add_option("--backend-config", serve.backend_config, "Backend config")->required();
    c_serve->add_option("--mapping", serve.mapping, "Department mapping TSV");
    c_serve->add_option("--data-dir", serve.data_dir, "Directory for session files");
    c_serve->add_flag("--in-memory", serve.in_memory, "Keep sessions in memory only");
    c_serve->add_option("--cors-origin", serve.cors_origin, "Allowed browser origin");

    ServiceArgs chat;
    auto* c_chat = app.add_subcommand("chat", "Terminal chat session");
    c_chat->add_option("--backend-config", chat.backend_config, "Backend config")->required();
    c_chat->add_option("--mapping", chat.mapping, "Department mapping TSV");

    CLI11_PARSE(app, argc, argv);

    try {
        if (*c_ingest) run_ingest(ingest);
        if (*c_synth) run_synthesize(synth);
        if (*c_format) run_format(fmt_in, fmt_marker, fmt_out);
        if (*c_stats) run_stats(stats_in, stats_report, stats_bucket);
        if (*c_classify) run_classify(classify);
        if (*c_aspects) run_aspects(aspects);
        if (*c_cfg) {
            if (use_lora >= 0) ov.use_lora = use_lora == 1;
            run_emit_config(cfg_out, ov);
        }
        if (*c_serve) run_serve(serve, port_opt->count() > 0);
        if (*c_chat) run_chat(chat);
    } catch (const Error& e) {
        std::cerr << "error: " << e.code() << ": " << e.what() << '\n';
        return 1;
    } catch (const json::exception& e) {
        std::cerr << "error: validation_failed: " << e.what() << '\n';
        return 1;
    } catch (const std::exception& e) {
        std::cerr << "error: internal_error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
