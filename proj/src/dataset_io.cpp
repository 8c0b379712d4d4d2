#include "ralb/dataset_io.hpp"

#include "ralb/errors.hpp"
#include "ralb/raw_tensor.hpp"

#include <json.hpp>

#include <fstream>
#include <map>

namespace ralb::data {

namespace fs = std::filesystem;
using nlohmann::ordered_json;

void write_dataset(const fs::path& dir, const StoredDataset& stored) {
  const Dataset& d = stored.dataset;
  if (d.captions.size() != d.size()) throw ArgumentError("write_dataset: every item needs a caption");
  fs::create_directories(dir / "images");
  ordered_json m;
  m["name"] = d.name;
  m["classes"] = d.class_names;
  m["split"] = {{"train_classes", stored.split.train_classes},
                {"zeroshot_classes", stored.split.zeroshot_classes},
                {"task_kind", task_kind_name(stored.split.task_kind)},
                {"partition", stored.partition == Partition::Train ? "train" : "zeroshot"}};
  m["seed"] = stored.seed;
  m["image_shape"] = {d.resolution.height, d.resolution.width, 3};
  auto items = ordered_json::array();
  const std::vector<std::uint32_t> dims{static_cast<std::uint32_t>(d.resolution.height),
                                        static_cast<std::uint32_t>(d.resolution.width), 3};
  for (std::size_t i = 0; i < d.size(); ++i) {
    const std::string id = d.captions[i].id;
    const std::string file = "images/" + id + ".rtns";
    write_raw_tensor(dir / file, dims, row_span(d.images, static_cast<Eigen::Index>(i)));
    items.push_back({{"id", id}, {"image_file", file}, {"label", d.labels[i]}, {"caption_id", id}});
  }
  m["items"] = std::move(items);
  std::ofstream out(dir / "manifest.json", std::ios::binary);
  if (!out) throw DataError("cannot write dataset manifest in " + dir.string());
  out << m.dump(2) << '\n';
  write_captions(dir / "captions.jsonl", d.captions);
}

StoredDataset read_dataset(const fs::path& dir) {
  std::ifstream in(dir / "manifest.json", std::ios::binary);
  if (!in) throw DataError("cannot read dataset manifest in " + dir.string());
  StoredDataset s;
  try {
    const auto m = nlohmann::json::parse(in);
    Dataset& d = s.dataset;
    d.name = m.value("name", "");
    d.class_names = m.at("classes").get<std::vector<std::string>>();
    const auto& sp = m.at("split");
    s.split.train_classes = sp.at("train_classes").get<std::vector<std::string>>();
    s.split.zeroshot_classes = sp.at("zeroshot_classes").get<std::vector<std::string>>();
    s.split.task_kind = parse_task_kind(sp.at("task_kind").get<std::string>());
    s.partition = sp.value("partition", "train") == "train" ? Partition::Train : Partition::ZeroShot;
    s.seed = m.at("seed").get<std::uint64_t>();
    const auto shape = m.at("image_shape").get<std::vector<int>>();
    if (shape.size() != 3 || shape[2] != 3) throw DataError("dataset: image_shape must be [H, W, 3]");
    d.resolution = {shape[0], shape[1]};

    std::map<std::string, AnnotatedCaption> captions;
    for (auto& c : read_captions(dir / "captions.jsonl")) captions.emplace(c.id, std::move(c));

    const auto& items = m.at("items");
    d.images.resize(static_cast<Eigen::Index>(items.size()), shape[0] * shape[1] * 3);
    for (std::size_t i = 0; i < items.size(); ++i) {
      const auto& it = items[i];
      const auto label = it.at("label").get<std::int32_t>();
      if (label < 0 || static_cast<std::size_t>(label) >= d.class_names.size())
        throw DataError("dataset: label out of range for item " + std::to_string(i));
      const RawTensor t = read_raw_tensor(dir / it.at("image_file").get<std::string>());
      if (t.values.size() != static_cast<std::size_t>(d.images.cols()))
        throw DataError("dataset: image size mismatch for item " + std::to_string(i));
      d.images.row(static_cast<Eigen::Index>(i)) =
          Eigen::Map<const RowVector>(t.values.data(), d.images.cols());
      d.labels.push_back(label);
      auto c = captions.find(it.at("caption_id").get<std::string>());
      if (c == captions.end()) throw DataError("dataset: missing caption for item " + std::to_string(i));
      d.captions.push_back(c->second);
    }
  } catch (const nlohmann::json::exception& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  } catch (const ArgumentError& e) {
    throw DataError(std::string("dataset manifest: ") + e.what());
  }
  return s;
}

}  // namespace ralb::data
