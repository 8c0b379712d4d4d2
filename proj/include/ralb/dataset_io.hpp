#pragma once

#include "ralb/datagen.hpp"

#include <cstdint>
#include <filesystem>

namespace ralb::data {

struct StoredDataset {
  Dataset dataset;
  DatasetSplit split;
  Partition partition = Partition::Train;
  std::uint64_t seed = 0;
};

// Layout: <dir>/manifest.json, <dir>/captions.jsonl, <dir>/images/<id>.rtns
//
// manifest.json: {"name", "classes": [...], "split": {"train_classes",
// "zeroshot_classes", "task_kind", "partition"}, "seed", "image_shape": [H, W, C],
// "items": [{"id", "image_file", "label", "caption_id"}]}
void write_dataset(const std::filesystem::path& dir, const StoredDataset& stored);
StoredDataset read_dataset(const std::filesystem::path& dir);

}  // namespace ralb::data
