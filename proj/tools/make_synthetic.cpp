// Writes the bundled synthetic corpora.
#include <fstream>
#include <iostream>

#include <CLI11.hpp>

#include "ppr/corpus.hpp"
#include "ppr/error.hpp"
#include "ppr/synth.hpp"

int main(int argc, char** argv) {
  CLI::App app{"Generate synthetic prompt histories", "ppr_synth"};
  std::string kind = "histories", output;
  std::size_t users = 10;
  std::uint64_t seed = 1;
  app.add_option("--kind", kind, "histories, style-oracle or dataset-scale")
      ->check(CLI::IsMember({"histories", "style-oracle", "dataset-scale"}))
      ->capture_default_str();
  app.add_option("--users", users, "Number of users")->capture_default_str();
  app.add_option("--seed", seed, "Random seed")->capture_default_str();
  app.add_option("--output", output, "JSONL path")->required();
  CLI11_PARSE(app, argc, argv);

  try {
    std::vector<ppr::PromptRecord> records;
    if (kind == "histories") {
      ppr::synth::Options o;
      o.users = users;
      o.seed = seed;
      records = ppr::synth::histories(o);
    } else if (kind == "style-oracle") {
      records = ppr::synth::style_oracle_histories(users, seed);
    } else {
      records = ppr::synth::dataset_scale_histories(seed);
    }
    std::ofstream out(output, std::ios::binary | std::ios::trunc);
    if (!out) throw ppr::Error("cannot write " + output);
    ppr::export_jsonl(ppr::synth::to_corpus(records), out);
    std::cerr << "wrote " << records.size() << " records to " << output << "\n";
  } catch (const std::exception& e) {
    std::cerr << "ppr_synth: " << e.what() << "\n";
    return 2;
  }
  return 0;
}
