// Writes the bundled mini fixture: a 200-record training set and a golden set
// drawn from three stylistic populations, plus the toy backend corpus and a run config.
#include <filesystem>
#include <iostream>
#include <string>

#include "mop/corpus.hpp"
#include "mop/hashing.hpp"
#include "mop/synthetic.hpp"

int main(int argc, char** argv) {
    if (argc != 2) {
        std::cerr << "usage: make_fixture <output-dir>\n";
        return 2;
    }
    namespace fs = std::filesystem;
    const fs::path dir = argv[1];
    fs::create_directories(dir);

    const mop::SyntheticPopulation population(11);
    const std::vector<double> weights = {0.5, 0.3, 0.2};
    mop::write_file((dir / "train.jsonl").string(),
                    mop::serialize_records(population.sample_mixture(weights, 200, 12, "train-")));
    mop::write_file((dir / "golden.jsonl").string(),
                    mop::serialize_records(population.sample_mixture(weights, 200, 13, "golden-")));

    std::string corpus;
    for (const auto& doc : mop::generic_prose_corpus(900, 14)) corpus += doc + "\n";
    mop::write_file((dir / "backend_corpus.txt").string(), corpus);

    mop::write_file((dir / "config.json").string(), R"({
  "task": "imdb",
  "template_format": "plain",
  "data": {"train": "train.jsonl", "golden": "golden.jsonl", "heldout_fraction": 0.2, "split_seed": 1},
  "backend": {"kind": "toy", "corpus": "backend_corpus.txt", "order": 3, "alpha": 0.1, "cache_weight": 5.0, "cache_prior": 2.0},
  "embedder": {"kind": "hashing", "dim": 256, "ngram": 3},
  "personas": {"K": 4, "representatives": 10, "seed": 2},
  "gating": {"N": 50, "M": 4, "d": 128, "pool_seed": 3, "init_seed": 4},
  "train": {"seed": 5},
  "generate": {"count": 500, "seed": 6},
  "metrics": {"seed": 7},
  "output_dir": "out"
}
)");
    return 0;
}
