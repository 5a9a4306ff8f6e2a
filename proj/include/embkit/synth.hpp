#pragma once

#include <cstddef>
#include <cstdint>
#include <filesystem>
#include <map>
#include <string>
#include <vector>

#include "embkit/datamodel.hpp"
#include "embkit/trainer.hpp"

// Seeded generator for a small benchmark built on topic clusters of
// pseudo-words. Queries and documents of a topic draw from disjoint word
// lists, so matching them must be learned; documents come in a
// passage style and an answer style, distinguished by style words.
namespace embkit::synth {

struct SynthConfig {
  std::uint64_t seed = 0;
  std::size_t topics = 8;
  std::size_t size = 64;  // base count: retrieval queries and passages per dataset scale with it
};

void validate(const SynthConfig& cfg);

struct Suite {
  std::vector<TaskDataset> datasets;
  std::map<std::string, std::string> task_tags;     // dataset name -> tag
  std::map<std::string, std::string> instructions;  // tag -> instruction
  std::vector<std::string> corpus;                  // plain texts for pre-training
  std::vector<TextPair> unlabeled;
  std::vector<train::LabeledTaskPair> labeled;
  std::map<std::string, int> word_topic;            // topical word -> topic index
};

Suite make_suite(const SynthConfig& cfg);

// Majority topic of the topical words in `text`, or -1 if it has none.
// Ties go to the lower topic index.
int topic_of(const Suite& suite, const std::string& text);

// Layout:
//   tasks/<name>.<kind>[.<part>].jsonl, tasks/tasks.json
//   train/corpus.jsonl ({"text"}), train/unlabeled.jsonl, train/labeled.jsonl,
//   train/instructions.json
void write_suite(const Suite& suite, const std::filesystem::path& dir);

std::vector<std::string> read_corpus(const std::filesystem::path& path);

}  // namespace embkit::synth
