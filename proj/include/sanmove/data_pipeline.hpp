#pragma once

#include <cstdint>
#include <iosfwd>
#include <map>
#include <optional>
#include <string>
#include <vector>

namespace sanmove::data {

struct CheckIn {
    std::string user_id;
    std::string location_id;
    std::int64_t timestamp = 0;  // seconds since epoch, UTC
    int tz_offset_min = 0;
    double lat = 0.0;
    double lon = 0.0;
};

struct Session {
    std::vector<CheckIn> records;
};

struct UserTrajectory {
    std::string user_id;
    std::vector<Session> sessions;
    std::size_t raw_record_count = 0;  // pre-sessionization, used by the 10-record filter
};

struct Reject {
    std::size_t line_no;
    std::string reason;
    std::string line;
};

struct ParseResult {
    std::vector<CheckIn> records;
    std::vector<Reject> rejects;
};

// Tab-separated: user, venue, category id, category name, lat, lon,
// tz offset minutes, UTC time string ("Tue Apr 03 18:00:09 +0000 2012").
ParseResult parse_checkins(std::istream& in);

// Epoch seconds for a "Www Mmm dd HH:MM:SS +zzzz yyyy" string, or nullopt.
std::optional<std::int64_t> parse_time_string(const std::string& s);

// 72 h gap split, then a < merge_minutes same-location de-dup that keeps the
// earlier record. Input must be sorted by timestamp.
std::vector<Session> sessionize(const std::vector<CheckIn>& records,
                                double gap_hours = 72.0, double merge_minutes = 10.0);

// In order: users with < 10 raw records, sessions with < 5 records,
// users with < 5 remaining sessions.
std::vector<UserTrajectory> filter_dataset(std::vector<UserTrajectory> users);

struct SessionSplit {
    std::vector<Session> train;
    std::vector<Session> test;
};
SessionSplit split_train_test(const UserTrajectory& user, double ratio = 0.8);

struct Vocab {
    std::map<std::string, std::size_t> user_index;          // [0, M)
    std::map<std::string, std::size_t> location_index;      // [1, N]; 0 = pad
    std::vector<std::string> user_ids;                      // index -> external id
    std::vector<std::string> location_ids;                  // index-1 -> external id
    std::vector<std::pair<double, double>> location_coords; // per index, [0] = pad
    std::size_t n_users() const { return user_ids.size(); }
    std::size_t n_locations() const { return location_ids.size(); }
    // 0 for unseen locations.
    std::size_t encode_location(const std::string& id) const;
};

// Built from the training split only. Location coordinates are averaged over
// that venue's training check-ins; the pad row gets the global mean.
Vocab build_vocab(const std::vector<std::pair<std::string, const std::vector<Session>*>>& train_users);

int time_to_slot(std::int64_t timestamp, int tz_offset_min);

struct SlotSimilarityTable {
    // 48x48 Jaccard similarities of per-slot location sets.
    std::vector<double> lambda = std::vector<double>(48 * 48, 0.0);
    double at(int c, int j) const { return lambda[std::size_t(c) * 48 + std::size_t(j)]; }
};

SlotSimilarityTable compute_slot_table(
    const Vocab& vocab,
    const std::vector<std::pair<std::string, const std::vector<Session>*>>& train_users);

struct DatasetStats {
    std::size_t users = 0;
    std::size_t records = 0;
    std::size_t sessions = 0;
    std::size_t distinct_locations = 0;
    std::int64_t span_seconds = 0;
};

DatasetStats stats_of_records(const std::vector<CheckIn>& records);
DatasetStats stats_of_users(const std::vector<UserTrajectory>& users);

// ---- Encoded dataset (model input) ----

struct EncRecord {
    std::size_t loc = 0;
    std::int64_t ts = 0;
    int slot = 0;
};

struct EncSession {
    std::size_t user = 0;
    std::vector<EncRecord> recs;
};

struct Dataset {
    Vocab vocab;
    SlotSimilarityTable slot_table;
    std::vector<EncSession> train;
    std::vector<EncSession> test;
    std::pair<double, double> coords_of(std::size_t loc) const {
        return vocab.location_coords[loc];
    }
};

struct PreprocessReport {
    DatasetStats raw;        // parsed records, pre-filter
    DatasetStats filtered;   // after all three filters
    std::size_t rejects = 0;
    std::size_t train_sessions = 0;
    std::size_t test_sessions = 0;
};

// Full pipeline: parse, sessionize, filter, split, encode.
Dataset preprocess(std::istream& in, std::vector<Reject>* rejects_out = nullptr,
                   PreprocessReport* report_out = nullptr);

void write_dataset(const Dataset& ds, std::ostream& out);
Dataset read_dataset(std::istream& in);

void write_stats_csv(const PreprocessReport& rep, std::ostream& out);
void write_rejects(const std::vector<Reject>& rejects, std::ostream& out);

}  // namespace sanmove::data
