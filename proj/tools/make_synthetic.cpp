// Copyright (c) 2026, The ckqti Authors
// SPDX-License-Identifier: Apache-2.0

// Writes a seeded synthetic collection with overlap-graded judgments.

#include <iostream>

#include "CLI11.hpp"
#include "ckqti/synthetic.hpp"

int main(int argc, char** argv)
{
    CLI::App app{"ckqti-synth: synthetic ranking collection"};
    ckqti::SyntheticConfig c;
    std::string dir;
    app.add_option("--out", dir, "Output directory")->required();
    app.add_option("--documents", c.documents, "Document count");
    app.add_option("--vocabulary", c.vocabulary, "Word types");
    app.add_option("--topics", c.topics, "Topic count");
    app.add_option("--words-per-topic", c.words_per_topic, "Words in each topic list");
    app.add_option("--train-queries", c.train_queries, "Training queries");
    app.add_option("--test-queries", c.test_queries, "Test queries");
    app.add_option("--seed", c.seed, "Generator seed");
    try {
        app.parse(argc, argv);
    } catch (const CLI::CallForHelp& e) {
        return app.exit(e);
    } catch (const CLI::ParseError& e) {
        app.exit(e);
        return 2;
    }
    try {
        const auto s = ckqti::make_synthetic(c);
        ckqti::write_synthetic(s, dir);
        std::cerr << s.corpus.documents.size() << " documents, " << s.train_queries.size() << " train and "
                  << s.test_queries.size() << " test queries, " << s.triples.size() << " training positives\n";
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
