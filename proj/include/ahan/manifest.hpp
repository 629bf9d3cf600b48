#pragma once

#include <filesystem>
#include <map>
#include <optional>
#include <string>
#include <string_view>
#include <vector>

namespace ahan {

enum class Split { train, test };

std::string_view to_string(Split split);
Split parse_split(std::string_view text);

struct ManifestEntry {
    std::string image_id;
    std::string identity;
    std::optional<std::string> twin_identity;
    Split split = Split::train;
    std::string path;  // relative to the manifest's directory unless absolute
};

/// Images, identities and the twin relation. CSV header:
/// image_id,identity_id,twin_identity_id,split,path
class TwinManifest {
  public:
    TwinManifest() = default;
    explicit TwinManifest(std::vector<ManifestEntry> entries, std::filesystem::path root = {});

    const std::vector<ManifestEntry>& entries() const { return entries_; }
    std::size_t size() const { return entries_.size(); }
    bool empty() const { return entries_.empty(); }
    const std::filesystem::path& root() const { return root_; }

    /// Unique image ids; twin relation symmetric and irreflexive.
    void validate() const;

    TwinManifest filter(Split split) const;
    /// Sorted identity ids.
    std::vector<std::string> identities() const;
    /// Entry indices per identity, in manifest order.
    std::map<std::string, std::vector<std::size_t>> images_by_identity() const;
    std::optional<std::string> twin_of(std::string_view identity) const;
    /// Identity pairs (a < b) where both twins have images in this manifest.
    std::vector<std::pair<std::string, std::string>> twin_families() const;
    std::filesystem::path resolve(const ManifestEntry& e) const;

    static TwinManifest read_csv(const std::filesystem::path& path);
    void write_csv(const std::filesystem::path& path) const;

  private:
    std::vector<ManifestEntry> entries_;
    std::filesystem::path root_;
};

}  // namespace ahan
