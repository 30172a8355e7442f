// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

#include <fstream>
#include <iostream>
#include <optional>
#include <string>
#include <vector>

#include "CLI11.hpp"
#include "ckqti/ckqti.hpp"
#include "json.hpp"

using namespace ckqti;
using nlohmann::json;

namespace {

constexpr int kExitRuntime = 1;
constexpr int kExitUsage = 2;

json load_config(const std::string& path)
{
    if (path.empty()) {
        return json::object();
    }
    std::ifstream in(path);
    if (!in) {
        throw Error("cannot open config '" + path + "'");
    }
    try {
        auto j = json::parse(in);
        if (!j.is_object()) {
            throw ConfigError("config file must hold a JSON object");
        }
        for (const auto& [key, value] : j.items()) {
            if (key != "model" && key != "train" && key != "bm25" && key != "min_df" && key != "preset") {
                throw ConfigError("config: unknown key '" + key + "'");
            }
        }
        return j;
    } catch (const json::parse_error& e) {
        throw ConfigError("config '" + path + "': " + e.what());
    }
}

/// Reads `section.key` when present, leaving `field` untouched otherwise.
template <typename V>
void take(const json& cfg, const char* section, const char* key, V& field)
{
    const json* obj = &cfg;
    if (section) {
        auto it = cfg.find(section);
        if (it == cfg.end()) {
            return;
        }
        obj = &*it;
    }
    if (auto it = obj->find(key); it != obj->end()) {
        try {
            field = it->get<V>();
        } catch (const json::exception&) {
            throw ConfigError(std::string("config: bad value for '") + (section ? std::string(section) + "." : "") +
                              key + "'");
        }
    }
}

struct Common {
    std::string config_path;
    std::optional<std::uint64_t> seed;
    json config = json::object();
};

struct CorpusArgs {
    std::string docs;
    std::string orcas;
    std::string vocab;
    std::optional<std::size_t> min_df;

    void add(CLI::App* app, bool need_vocab)
    {
        app->add_option("--docs", docs, "Documents TSV: id, url, title, body")->required()->check(CLI::ExistingFile);
        app->add_option("--orcas", orcas, "Optional clicked-query TSV: docid, query")->check(CLI::ExistingFile);
        auto* v = app->add_option("--vocab", vocab, "Vocabulary file from build-vocab");
        if (need_vocab) {
            v->required();
        }
        v->check(CLI::ExistingFile);
    }

    [[nodiscard]] RawCorpus raw() const
    {
        return ingest_corpus(docs, orcas.empty() ? std::nullopt : std::optional<std::filesystem::path>(orcas));
    }

    [[nodiscard]] Corpus load(const Common& common) const
    {
        auto r = raw();
        report_ingest(r.stats);
        if (!vocab.empty()) {
            return make_corpus(r, Vocabulary::load(std::filesystem::path(vocab)));
        }
        std::size_t df = 2;
        take(common.config, nullptr, "min_df", df);
        return make_corpus(r, min_df.value_or(df));
    }

    static void report_ingest(const IngestStats& s)
    {
        std::cerr << "ingested " << s.documents << " documents (" << s.malformed_lines << " malformed, "
                  << s.truncated_documents << " truncated)\n";
    }
};

template <typename T>
void check_vocab(const Model<T>& model, const Corpus& corpus)
{
    if (model.config().uses_latent() && model.config().embedding_rows != corpus.vocab.embedding_rows()) {
        throw ConfigError("model has " + std::to_string(model.config().embedding_rows) +
                          " embedding rows but the vocabulary needs " +
                          std::to_string(corpus.vocab.embedding_rows()));
    }
}

std::ofstream open_out(const std::string& path)
{
    std::ofstream out(path);
    if (!out) {
        throw Error("cannot open '" + path + "' for writing");
    }
    return out;
}

}  // namespace

int main(int argc, char** argv)
{
    CLI::App app{"ckqti: query-term-independent neural ranking"};
    app.require_subcommand(1);
    Common common;
    std::uint64_t seed_value = 0;
    auto* seed_opt = app.add_option("--seed", seed_value, "Seed for every random choice (overrides the config)");
    app.add_option("--config", common.config_path, "JSON config: {preset, model, train, bm25, min_df}")
        ->check(CLI::ExistingFile);

    // build-vocab
    auto* bv = app.add_subcommand("build-vocab", "Build the term vocabulary of a document collection");
    CorpusArgs bv_corpus;
    std::string bv_out;
    std::size_t bv_min_df = 2;
    bv->add_option("--docs", bv_corpus.docs, "Documents TSV")->required()->check(CLI::ExistingFile);
    bv->add_option("--orcas", bv_corpus.orcas, "Optional clicked-query TSV")->check(CLI::ExistingFile);
    auto* bv_df = bv->add_option("--min-df", bv_min_df, "Minimum document frequency for an embedding row");
    bv->add_option("--out", bv_out, "Output vocabulary file")->required();

    // train
    auto* tr = app.add_subcommand("train", "Train a ranking model with pairwise RankNet loss");
    CorpusArgs tr_corpus;
    tr_corpus.add(tr, false);
    auto* tr_df = tr->add_option("--min-df", bv_min_df, "Minimum document frequency when no --vocab is given");
    std::string tr_queries, tr_triples, tr_candidates, tr_out, tr_trace, tr_variant, tr_preset, tr_embeddings;
    double tr_lr = 0;
    std::size_t tr_steps = 0, tr_epochs = 0, tr_batch = 0;
    tr->add_option("--queries", tr_queries, "Training queries TSV: qid, text")->required()->check(CLI::ExistingFile);
    tr->add_option("--triples", tr_triples, "Training positives TSV: qid, docid")->required()->check(CLI::ExistingFile);
    tr->add_option("--candidates", tr_candidates, "Candidate run for negatives (default: BM25 top 100)")
        ->check(CLI::ExistingFile);
    tr->add_option("--out", tr_out, "Output checkpoint")->required();
    tr->add_option("--loss-trace", tr_trace, "Write step,mean_loss CSV");
    auto* tr_variant_opt = tr->add_option("--variant", tr_variant, "ndrm1 | ndrm2 | ndrm3");
    auto* tr_preset_opt = tr->add_option("--preset", tr_preset, "full | desk model size");
    tr->add_option("--embeddings", tr_embeddings, "Text embeddings to initialize the table ('word v1 v2 ...')")
        ->check(CLI::ExistingFile);
    auto* tr_lr_opt = tr->add_option("--lr", tr_lr, "Adam learning rate");
    auto* tr_steps_opt = tr->add_option("--steps", tr_steps, "Optimizer steps (overrides --epochs)");
    auto* tr_epochs_opt = tr->add_option("--epochs", tr_epochs, "Passes over the training examples");
    auto* tr_batch_opt = tr->add_option("--batch", tr_batch, "Training instances per step");

    // index
    auto* ix = app.add_subcommand("index", "Precompute the term-impact index of a collection");
    CorpusArgs ix_corpus;
    ix_corpus.add(ix, true);
    std::string ix_model, ix_out;
    std::size_t ix_threads = 1;
    ix->add_option("--model", ix_model, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    ix->add_option("--out", ix_out, "Output index file")->required();
    ix->add_option("--threads", ix_threads, "Worker threads")->check(CLI::PositiveNumber);

    // search
    auto* se = app.add_subcommand("search", "Full-collection retrieval from an impact index");
    std::string se_index, se_queries, se_out, se_tag = "ckqti";
    std::size_t se_k = 100;
    se->add_option("--index", se_index, "Index file")->required()->check(CLI::ExistingFile);
    se->add_option("--queries", se_queries, "Queries TSV: qid, text")->required()->check(CLI::ExistingFile);
    se->add_option("--k", se_k, "Results per query")->check(CLI::PositiveNumber);
    se->add_option("--out", se_out, "TREC run file (default: stdout)");
    se->add_option("--tag", se_tag, "Run tag");

    // rerank
    auto* rr = app.add_subcommand("rerank", "Rescore candidate lists with a trained model");
    CorpusArgs rr_corpus;
    rr_corpus.add(rr, true);
    std::string rr_model, rr_queries, rr_candidates, rr_out, rr_tag = "ckqti-rerank";
    rr->add_option("--model", rr_model, "Trained checkpoint")->required()->check(CLI::ExistingFile);
    rr->add_option("--queries", rr_queries, "Queries TSV")->required()->check(CLI::ExistingFile);
    rr->add_option("--candidates", rr_candidates, "Candidate run (TREC or qid docid rank)")
        ->required()
        ->check(CLI::ExistingFile);
    rr->add_option("--out", rr_out, "TREC run file (default: stdout)");
    rr->add_option("--tag", rr_tag, "Run tag");

    // eval
    auto* ev = app.add_subcommand("eval", "Evaluate a run against graded judgments");
    std::string ev_run, ev_qrels, ev_metric = "ndcg", ev_csv;
    EvalOptions ev_opts;
    ev->add_option("--run", ev_run, "TREC run file")->required()->check(CLI::ExistingFile);
    ev->add_option("--qrels", ev_qrels, "Judgments: qid iter docid rel")->required()->check(CLI::ExistingFile);
    ev->add_option("--metric", ev_metric, "ndcg | ncg | ap | rr");
    ev->add_option("--cutoff", ev_opts.cutoff, "Rank cutoff")->check(CLI::PositiveNumber);
    ev->add_option("--relevance-threshold", ev_opts.relevance_threshold, "Minimum label counted relevant by ap and rr");
    ev->add_option("--per-query", ev_csv, "Write the per-query CSV here instead of stdout");

    // bench-memory
    auto* bm = app.add_subcommand("bench-memory", "Peak activation memory of standard vs separable attention");
    BenchConfig bench;
    std::string bm_out;
    double bm_cap_gib = 3.0;
    bm->add_option("--lengths", bench.lengths, "Sequence lengths")->expected(1, -1);
    bm->add_option("--out", bm_out, "Append rows to this CSV (default: stdout)");
    bm->add_option("--cap-gib", bm_cap_gib, "Record runs above this estimated peak as capped");
    bm->add_option("--dim", bench.attention.model_dim, "Model dimension");
    bm->add_option("--layers", bench.attention.num_layers, "Encoder layers");

    // selftest
    auto* st = app.add_subcommand("selftest", "Run the oracle and finite-difference gradient suites");
    double st_tol = 1e-3;
    st->add_option("--tolerance", st_tol, "Maximum relative gradient error");

    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::CallForAllHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return kExitUsage;
    }

    try {
        common.config = load_config(common.config_path);
        if (seed_opt->count()) {
            common.seed = seed_value;
        }

        if (bv->parsed()) {
            auto raw = bv_corpus.raw();
            CorpusArgs::report_ingest(raw.stats);
            std::size_t df = 2;
            take(common.config, nullptr, "min_df", df);
            if (bv_df->count()) {
                df = bv_min_df;
            }
            std::vector<std::vector<std::string>> tokens;
            tokens.reserve(raw.documents.size());
            for (auto& d : raw.documents) {
                tokens.push_back(std::move(d.tokens));
            }
            auto vocab = Vocabulary::build(tokens, df);
            vocab.save(std::filesystem::path(bv_out));
            std::cerr << vocab.size() << " terms, " << vocab.embedding_rows() << " embedding rows\n";
        } else if (tr->parsed()) {
            if (tr_df->count()) {
                tr_corpus.min_df = bv_min_df;
            }
            const auto corpus = tr_corpus.load(common);

            // defaults < config < flags
            std::string preset = "full";
            take(common.config, nullptr, "preset", preset);
            if (tr_preset_opt->count()) {
                preset = tr_preset;
            }
            std::string variant = "ndrm3";
            take(common.config, "model", "variant", variant);
            if (tr_variant_opt->count()) {
                variant = tr_variant;
            }
            ModelConfig base;
            if (preset == "desk") {
                base = desk_model_config(model_variant_from_string(variant), corpus.vocab.embedding_rows());
            } else if (preset != "full") {
                throw ConfigError("unknown preset '" + preset + "' (expected full or desk)");
            }
            base.embedding_rows = corpus.vocab.embedding_rows();
            ModelConfig mc = common.config.contains("model") ? ModelConfig::from_json(common.config["model"], base) : base;
            mc.variant = model_variant_from_string(variant);
            mc.embedding_rows = corpus.vocab.embedding_rows();

            TrainConfig tc;
            std::size_t steps = 0, epochs = 1;
            take(common.config, "train", "learning_rate", tc.optimizer.learning_rate);
            take(common.config, "train", "beta1", tc.optimizer.beta1);
            take(common.config, "train", "beta2", tc.optimizer.beta2);
            take(common.config, "train", "epsilon", tc.optimizer.epsilon);
            take(common.config, "train", "clip_norm", tc.optimizer.clip_norm);
            take(common.config, "train", "batch_instances", tc.batch_instances);
            take(common.config, "train", "seed", tc.seed);
            take(common.config, "train", "steps", steps);
            take(common.config, "train", "epochs", epochs);
            if (tr_lr_opt->count()) {
                tc.optimizer.learning_rate = tr_lr;
            }
            if (tr_batch_opt->count()) {
                tc.batch_instances = tr_batch;
            }
            if (tr_epochs_opt->count()) {
                epochs = tr_epochs;
                steps = 0;
            }
            if (tr_steps_opt->count()) {
                steps = tr_steps;
            }
            if (common.seed) {
                mc.seed = *common.seed;
                tc.seed = *common.seed;
            }
            mc.validate();

            Bm25Params bp;
            take(common.config, "bm25", "k1", bp.k1);
            take(common.config, "bm25", "b", bp.b);
            auto queries = read_queries(tr_queries, corpus.vocab);
            const Run candidates = tr_candidates.empty() ? Bm25Index(corpus).run(queries, 100, bp) : Run::read(tr_candidates);
            auto data = make_training_data(corpus, std::move(queries), read_training_triples(tr_triples), candidates);
            if (data.examples.empty()) {
                throw Error("train: no usable training examples");
            }
            std::cout << "resolved "
                      << json{{"model", mc.to_json()},
                              {"train",
                               {{"learning_rate", tc.optimizer.learning_rate},
                                {"batch_instances", tc.batch_instances},
                                {"seed", tc.seed},
                                {"steps", steps},
                                {"epochs", epochs}}}}
                             .dump()
                      << '\n';
            std::cerr << data.examples.size() << " examples (" << data.skipped_examples << " skipped)\n";

            Model<float> model(mc);
            if (!tr_embeddings.empty()) {
                std::ifstream in(tr_embeddings);
                if (!in) {
                    throw Error("cannot open '" + tr_embeddings + "'");
                }
                std::cerr << load_text_embeddings(in, corpus.vocab, model) << " embedding rows loaded\n";
            }
            Trainer<float> trainer(model, corpus, data, tc);
            if (steps > 0) {
                trainer.train_steps(steps);
            } else {
                for (std::size_t e = 0; e < epochs; ++e) {
                    trainer.train_epoch();
                }
            }
            const auto& trace = trainer.trace();
            if (!trace.empty()) {
                std::cerr << trace.size() << " steps, final batch loss " << trace.back().mean_loss << '\n';
            }
            if (!tr_trace.empty()) {
                auto out = open_out(tr_trace);
                write_loss_trace(out, std::span<const LossRecord>(trace));
            }
            model.freeze();
            model.save(tr_out);
        } else if (ix->parsed()) {
            const auto corpus = ix_corpus.load(common);
            auto model = Model<float>::load(ix_model);
            check_vocab(model, corpus);
            const auto index = build_index(corpus, model, ix_threads);
            index.save(ix_out);
            std::cerr << index.doc_count() << " documents, " << index.posting_count() << " postings\n";
        } else if (se->parsed()) {
            const auto index = ImpactIndex::load(se_index);
            const auto queries = read_queries(se_queries, index.vocab());
            const auto run = fullrank_run(index, queries, se_k);
            if (se_out.empty()) {
                run.write(std::cout, se_tag);
            } else {
                auto out = open_out(se_out);
                run.write(out, se_tag);
            }
        } else if (rr->parsed()) {
            const auto corpus = rr_corpus.load(common);
            auto model = Model<float>::load(rr_model);
            check_vocab(model, corpus);
            const auto queries = read_queries(rr_queries, corpus.vocab);
            std::size_t skipped = 0;
            const auto run = rerank_run(model, corpus, queries, Run::read(rr_candidates), &skipped);
            if (skipped) {
                std::cerr << skipped << " unknown candidate ids skipped\n";
            }
            if (rr_out.empty()) {
                run.write(std::cout, rr_tag);
            } else {
                auto out = open_out(rr_out);
                run.write(out, rr_tag);
            }
        } else if (ev->parsed()) {
            const auto metric = metric_from_string(ev_metric);
            const auto result = evaluate(Run::read(ev_run), Qrels::read(ev_qrels), metric, ev_opts);
            std::cout << to_string(metric) << '@' << ev_opts.cutoff << ' ' << result.mean << " over "
                      << result.per_query.size() << " queries";
            if (result.unjudged_queries) {
                std::cout << " (" << result.unjudged_queries << " unjudged skipped)";
            }
            std::cout << '\n';
            if (ev_csv.empty()) {
                result.write_csv(std::cout, metric);
            } else {
                auto out = open_out(ev_csv);
                result.write_csv(out, metric);
            }
        } else if (bm->parsed()) {
            bench.attention.ffn_dim = 2 * bench.attention.model_dim;
            bench.attention.key_dim = bench.attention.value_dim = bench.attention.model_dim / bench.attention.num_heads;
            bench.cap_bytes = static_cast<std::size_t>(bm_cap_gib * static_cast<double>(std::size_t{1} << 30));
            if (common.seed) {
                bench.seed = *common.seed;
            }
            const auto records = bench_memory(bench);
            if (bm_out.empty()) {
                write_bench_header(std::cout);
                write_bench_rows(std::cout, std::span<const BenchRecord>(records));
            } else {
                append_bench_csv(bm_out, std::span<const BenchRecord>(records));
            }
        } else if (st->parsed()) {
            bool ok = true;
            auto print = [&](const char* suite, const std::vector<SelfCheck>& results) {
                for (const auto& r : results) {
                    std::cout << (r.passed ? "PASS " : "FAIL ") << suite << ' ' << r.name
                              << " err=" << r.max_relative_error << " checked=" << r.checked << '\n';
                    ok = ok && r.passed;
                }
            };
            print("oracle", oracle_suite());
            print("gradient", gradient_suite(st_tol));
            return ok ? 0 : kExitRuntime;
        }
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return kExitRuntime;
    }
    return 0;
}
