#include "sanmove/data_pipeline.hpp"

#include <algorithm>
#include <array>
#include <cmath>
#include <cstdio>
#include <istream>
#include <ostream>
#include <set>
#include <sstream>
#include <stdexcept>
#include <unordered_map>

namespace sanmove::data {

namespace {

// Days since 1970-01-01 for a proleptic Gregorian date.
std::int64_t days_from_civil(int y, int m, int d) {
    y -= m <= 2;
    const std::int64_t era = (y >= 0 ? y : y - 399) / 400;
    const std::int64_t yoe = y - era * 400;
    const std::int64_t doy = (153 * (m + (m > 2 ? -3 : 9)) + 2) / 5 + d - 1;
    const std::int64_t doe = yoe * 365 + yoe / 4 - yoe / 100 + doy;
    return era * 146097 + doe - 719468;
}

int month_from_name(const std::string& s) {
    static const std::array<const char*, 12> names = {"Jan", "Feb", "Mar", "Apr", "May", "Jun",
                                                      "Jul", "Aug", "Sep", "Oct", "Nov", "Dec"};
    for (int i = 0; i < 12; ++i)
        if (s == names[i]) return i + 1;
    return 0;
}

std::vector<std::string> split_tabs(const std::string& line) {
    std::vector<std::string> out;
    std::size_t start = 0;
    while (true) {
        const auto pos = line.find('\t', start);
        if (pos == std::string::npos) {
            out.push_back(line.substr(start));
            break;
        }
        out.push_back(line.substr(start, pos - start));
        start = pos + 1;
    }
    return out;
}

std::int64_t floor_div(std::int64_t a, std::int64_t b) {
    std::int64_t q = a / b;
    if ((a % b != 0) && ((a < 0) != (b < 0))) --q;
    return q;
}

void fmt_double(std::ostream& out, double v) {
    char buf[40];
    std::snprintf(buf, sizeof(buf), "%.17g", v);
    out << buf;
}

}  // namespace

std::optional<std::int64_t> parse_time_string(const std::string& s) {
    // "Tue Apr 03 18:00:09 +0000 2012"
    std::istringstream ss(s);
    std::string dow, mon, tod, off;
    int day = 0, year = 0;
    if (!(ss >> dow >> mon >> day >> tod >> off >> year)) return std::nullopt;
    const int month = month_from_name(mon);
    if (month == 0 || day < 1 || day > 31) return std::nullopt;
    int hh, mm, sec;
    if (std::sscanf(tod.c_str(), "%d:%d:%d", &hh, &mm, &sec) != 3) return std::nullopt;
    if (hh < 0 || hh > 23 || mm < 0 || mm > 59 || sec < 0 || sec > 60) return std::nullopt;
    if (off.size() != 5 || (off[0] != '+' && off[0] != '-')) return std::nullopt;
    const int off_min = (off[1] - '0') * 600 + (off[2] - '0') * 60 + (off[3] - '0') * 10 + (off[4] - '0');
    const int sign = off[0] == '-' ? -1 : 1;
    const std::int64_t days = days_from_civil(year, month, day);
    return days * 86400 + hh * 3600 + mm * 60 + sec - sign * off_min * 60;
}

ParseResult parse_checkins(std::istream& in) {
    ParseResult res;
    std::string line;
    std::size_t line_no = 0;
    while (std::getline(in, line)) {
        ++line_no;
        if (!line.empty() && line.back() == '\r') line.pop_back();
        if (line.empty()) continue;
        const auto cols = split_tabs(line);
        if (cols.size() != 8) {
            res.rejects.push_back({line_no, "expected 8 tab-separated columns, got " + std::to_string(cols.size()), line});
            continue;
        }
        CheckIn c;
        c.user_id = cols[0];
        c.location_id = cols[1];
        try {
            c.lat = std::stod(cols[4]);
            c.lon = std::stod(cols[5]);
            c.tz_offset_min = std::stoi(cols[6]);
        } catch (const std::exception&) {
            res.rejects.push_back({line_no, "unparseable numeric field", line});
            continue;
        }
        if (c.lat < -90.0 || c.lat > 90.0) {
            res.rejects.push_back({line_no, "lat out of range", line});
            continue;
        }
        if (c.lon < -180.0 || c.lon > 180.0) {
            res.rejects.push_back({line_no, "lon out of range", line});
            continue;
        }
        const auto ts = parse_time_string(cols[7]);
        if (!ts) {
            res.rejects.push_back({line_no, "unparseable time string", line});
            continue;
        }
        c.timestamp = *ts;
        if (c.timestamp <= 0) {
            res.rejects.push_back({line_no, "timestamp not positive", line});
            continue;
        }
        res.records.push_back(std::move(c));
    }
    return res;
}

std::vector<Session> sessionize(const std::vector<CheckIn>& records,
                                double gap_hours, double merge_minutes) {
    for (std::size_t i = 1; i < records.size(); ++i)
        if (records[i].timestamp < records[i - 1].timestamp)
            throw std::invalid_argument("sessionize: records not sorted by timestamp");
    const double gap_s = gap_hours * 3600.0;
    const double merge_s = merge_minutes * 60.0;
    std::vector<Session> out;
    for (const auto& r : records) {
        const bool new_session =
            out.empty() || double(r.timestamp - out.back().records.back().timestamp) >= gap_s;
        if (new_session) {
            out.emplace_back();
            out.back().records.push_back(r);
            continue;
        }
        auto& cur = out.back().records;
        const auto& prev = cur.back();
        if (double(r.timestamp - prev.timestamp) < merge_s && r.location_id == prev.location_id)
            continue;  // de-dup, keep the earlier record
        cur.push_back(r);
    }
    return out;
}

std::vector<UserTrajectory> filter_dataset(std::vector<UserTrajectory> users) {
    std::vector<UserTrajectory> out;
    for (auto& u : users) {
        if (u.raw_record_count < 10) continue;
        std::vector<Session> kept;
        for (auto& s : u.sessions)
            if (s.records.size() >= 5) kept.push_back(std::move(s));
        if (kept.size() < 5) continue;
        u.sessions = std::move(kept);
        out.push_back(std::move(u));
    }
    return out;
}

SessionSplit split_train_test(const UserTrajectory& user, double ratio) {
    const std::size_t n = user.sessions.size();
    if (n < 2) throw std::invalid_argument("split_train_test: need at least 2 sessions");
    const std::size_t n_train = std::size_t(std::ceil(ratio * double(n)));
    SessionSplit split;
    split.train.assign(user.sessions.begin(), user.sessions.begin() + std::ptrdiff_t(n_train));
    split.test.assign(user.sessions.begin() + std::ptrdiff_t(n_train), user.sessions.end());
    return split;
}

std::size_t Vocab::encode_location(const std::string& id) const {
    const auto it = location_index.find(id);
    return it == location_index.end() ? 0 : it->second;
}

Vocab build_vocab(const std::vector<std::pair<std::string, const std::vector<Session>*>>& train_users) {
    Vocab v;
    std::size_t total = 0;
    for (const auto& [uid, sessions] : train_users)
        for (const auto& s : *sessions) total += s.records.size();
    if (train_users.empty() || total == 0)
        throw std::invalid_argument("build_vocab: empty training set");

    std::vector<double> lat_sum, lon_sum;
    std::vector<std::size_t> count;
    double glat = 0.0, glon = 0.0;
    for (const auto& [uid, sessions] : train_users) {
        if (!v.user_index.count(uid)) {
            v.user_index[uid] = v.user_ids.size();
            v.user_ids.push_back(uid);
        }
        for (const auto& s : *sessions) {
            for (const auto& r : s.records) {
                auto it = v.location_index.find(r.location_id);
                std::size_t idx;
                if (it == v.location_index.end()) {
                    idx = v.location_ids.size() + 1;
                    v.location_index[r.location_id] = idx;
                    v.location_ids.push_back(r.location_id);
                    lat_sum.push_back(0.0);
                    lon_sum.push_back(0.0);
                    count.push_back(0);
                } else {
                    idx = it->second;
                }
                lat_sum[idx - 1] += r.lat;
                lon_sum[idx - 1] += r.lon;
                count[idx - 1] += 1;
                glat += r.lat;
                glon += r.lon;
            }
        }
    }
    v.location_coords.resize(v.location_ids.size() + 1);
    v.location_coords[0] = {glat / double(total), glon / double(total)};
    for (std::size_t i = 0; i < v.location_ids.size(); ++i)
        v.location_coords[i + 1] = {lat_sum[i] / double(count[i]), lon_sum[i] / double(count[i])};
    return v;
}

int time_to_slot(std::int64_t timestamp, int tz_offset_min) {
    const std::int64_t local = timestamp + std::int64_t(tz_offset_min) * 60;
    const std::int64_t days = floor_div(local, 86400);
    const std::int64_t secs = local - days * 86400;
    const int hour = int(secs / 3600);
    const int dow = int(((days + 4) % 7 + 7) % 7);  // 0 = Sunday (1970-01-01 was a Thursday)
    const bool weekend = dow == 0 || dow == 6;
    return weekend ? 24 + hour : hour;
}

SlotSimilarityTable compute_slot_table(
    const Vocab& vocab,
    const std::vector<std::pair<std::string, const std::vector<Session>*>>& train_users) {
    std::array<std::set<std::size_t>, 48> slot_locs;
    for (const auto& [uid, sessions] : train_users)
        for (const auto& s : *sessions)
            for (const auto& r : s.records) {
                const auto loc = vocab.encode_location(r.location_id);
                if (loc == 0) continue;
                slot_locs[std::size_t(time_to_slot(r.timestamp, r.tz_offset_min))].insert(loc);
            }
    SlotSimilarityTable table;
    for (int c = 0; c < 48; ++c) {
        for (int j = c; j < 48; ++j) {
            const auto& a = slot_locs[std::size_t(c)];
            const auto& b = slot_locs[std::size_t(j)];
            std::size_t inter = 0;
            for (auto x : a)
                if (b.count(x)) ++inter;
            const std::size_t uni = a.size() + b.size() - inter;
            const double v = uni == 0 ? 0.0 : double(inter) / double(uni);
            table.lambda[std::size_t(c) * 48 + std::size_t(j)] = v;
            table.lambda[std::size_t(j) * 48 + std::size_t(c)] = v;
        }
    }
    return table;
}

DatasetStats stats_of_records(const std::vector<CheckIn>& records) {
    DatasetStats st;
    st.records = records.size();
    std::set<std::string> users, locs;
    std::int64_t lo = 0, hi = 0;
    for (const auto& r : records) {
        users.insert(r.user_id);
        locs.insert(r.location_id);
        if (lo == 0 || r.timestamp < lo) lo = r.timestamp;
        if (r.timestamp > hi) hi = r.timestamp;
    }
    st.users = users.size();
    st.distinct_locations = locs.size();
    st.span_seconds = records.empty() ? 0 : hi - lo;
    return st;
}

DatasetStats stats_of_users(const std::vector<UserTrajectory>& users) {
    std::vector<CheckIn> all;
    DatasetStats st;
    for (const auto& u : users) {
        st.sessions += u.sessions.size();
        for (const auto& s : u.sessions)
            all.insert(all.end(), s.records.begin(), s.records.end());
    }
    auto base = stats_of_records(all);
    base.sessions = st.sessions;
    base.users = users.size();
    return base;
}

Dataset preprocess(std::istream& in, std::vector<Reject>* rejects_out, PreprocessReport* report_out) {
    auto parsed = parse_checkins(in);
    if (rejects_out) *rejects_out = parsed.rejects;
    // raw stats must be taken before grouping moves the records out
    const DatasetStats raw_stats = stats_of_records(parsed.records);

    // Group by user in first-seen order, stably sort each by timestamp.
    std::unordered_map<std::string, std::size_t> user_pos;
    std::vector<std::pair<std::string, std::vector<CheckIn>>> by_user;
    for (auto& r : parsed.records) {
        auto it = user_pos.find(r.user_id);
        if (it == user_pos.end()) {
            user_pos[r.user_id] = by_user.size();
            by_user.push_back({r.user_id, {}});
            by_user.back().second.push_back(std::move(r));
        } else {
            by_user[it->second].second.push_back(std::move(r));
        }
    }
    std::sort(by_user.begin(), by_user.end(),
              [](const auto& a, const auto& b) { return a.first < b.first; });

    std::vector<UserTrajectory> users;
    for (auto& [uid, recs] : by_user) {
        std::stable_sort(recs.begin(), recs.end(),
                         [](const CheckIn& a, const CheckIn& b) { return a.timestamp < b.timestamp; });
        UserTrajectory u;
        u.user_id = uid;
        u.raw_record_count = recs.size();
        u.sessions = sessionize(recs);
        users.push_back(std::move(u));
    }
    users = filter_dataset(std::move(users));

    std::vector<SessionSplit> splits;
    splits.reserve(users.size());
    for (const auto& u : users) splits.push_back(split_train_test(u));

    std::vector<std::pair<std::string, const std::vector<Session>*>> train_users;
    for (std::size_t i = 0; i < users.size(); ++i)
        train_users.push_back({users[i].user_id, &splits[i].train});

    Dataset ds;
    ds.vocab = build_vocab(train_users);
    ds.slot_table = compute_slot_table(ds.vocab, train_users);

    auto encode = [&](const std::string& uid, const Session& s) {
        EncSession es;
        es.user = ds.vocab.user_index.at(uid);
        for (const auto& r : s.records)
            es.recs.push_back({ds.vocab.encode_location(r.location_id), r.timestamp,
                               time_to_slot(r.timestamp, r.tz_offset_min)});
        return es;
    };
    for (std::size_t i = 0; i < users.size(); ++i) {
        for (const auto& s : splits[i].train) ds.train.push_back(encode(users[i].user_id, s));
        for (const auto& s : splits[i].test) ds.test.push_back(encode(users[i].user_id, s));
    }

    if (report_out) {
        report_out->raw = raw_stats;
        report_out->filtered = stats_of_users(users);
        report_out->rejects = parsed.rejects.size();
        report_out->train_sessions = ds.train.size();
        report_out->test_sessions = ds.test.size();
    }
    return ds;
}

void write_dataset(const Dataset& ds, std::ostream& out) {
    out << "SANMOVE-DATASET v1\n";
    out << "users " << ds.vocab.n_users() << "\n";
    for (const auto& id : ds.vocab.user_ids) out << id << "\n";
    out << "locations " << ds.vocab.n_locations() << "\n";
    for (std::size_t i = 0; i < ds.vocab.n_locations(); ++i) {
        out << ds.vocab.location_ids[i] << " ";
        fmt_double(out, ds.vocab.location_coords[i + 1].first);
        out << " ";
        fmt_double(out, ds.vocab.location_coords[i + 1].second);
        out << "\n";
    }
    out << "pad_coords ";
    fmt_double(out, ds.vocab.location_coords[0].first);
    out << " ";
    fmt_double(out, ds.vocab.location_coords[0].second);
    out << "\n";
    out << "slot_table\n";
    for (int c = 0; c < 48; ++c) {
        for (int j = 0; j < 48; ++j) {
            if (j) out << " ";
            fmt_double(out, ds.slot_table.at(c, j));
        }
        out << "\n";
    }
    auto write_sessions = [&](const char* tag, const std::vector<EncSession>& ss) {
        out << tag << " " << ss.size() << "\n";
        for (const auto& s : ss) {
            out << s.user << " " << s.recs.size();
            for (const auto& r : s.recs) out << " " << r.loc << " " << r.ts << " " << r.slot;
            out << "\n";
        }
    };
    write_sessions("train_sessions", ds.train);
    write_sessions("test_sessions", ds.test);
}

Dataset read_dataset(std::istream& in) {
    auto fail = [](const std::string& why) -> std::runtime_error {
        return std::runtime_error("read_dataset: " + why);
    };
    std::string line;
    if (!std::getline(in, line) || line != "SANMOVE-DATASET v1") throw fail("bad header");
    Dataset ds;
    std::string word;
    std::size_t count;
    in >> word >> count;
    if (word != "users") throw fail("expected users section");
    for (std::size_t i = 0; i < count; ++i) {
        std::string id;
        in >> id;
        ds.vocab.user_index[id] = i;
        ds.vocab.user_ids.push_back(id);
    }
    in >> word >> count;
    if (word != "locations") throw fail("expected locations section");
    ds.vocab.location_coords.resize(count + 1);
    for (std::size_t i = 0; i < count; ++i) {
        std::string id;
        double lat, lon;
        in >> id >> lat >> lon;
        ds.vocab.location_index[id] = i + 1;
        ds.vocab.location_ids.push_back(id);
        ds.vocab.location_coords[i + 1] = {lat, lon};
    }
    in >> word;
    if (word != "pad_coords") throw fail("expected pad_coords");
    in >> ds.vocab.location_coords[0].first >> ds.vocab.location_coords[0].second;
    in >> word;
    if (word != "slot_table") throw fail("expected slot_table");
    for (auto& v : ds.slot_table.lambda)
        if (!(in >> v)) throw fail("truncated slot table");
    auto read_sessions = [&](const char* tag, std::vector<EncSession>& ss) {
        in >> word >> count;
        if (word != tag) throw fail(std::string("expected ") + tag);
        for (std::size_t i = 0; i < count; ++i) {
            EncSession s;
            std::size_t k;
            if (!(in >> s.user >> k)) throw fail("truncated session header");
            for (std::size_t j = 0; j < k; ++j) {
                EncRecord r;
                if (!(in >> r.loc >> r.ts >> r.slot)) throw fail("truncated session record");
                s.recs.push_back(r);
            }
            ss.push_back(std::move(s));
        }
    };
    read_sessions("train_sessions", ds.train);
    read_sessions("test_sessions", ds.test);
    return ds;
}

void write_stats_csv(const PreprocessReport& rep, std::ostream& out) {
    out << "stage,users,records,sessions,distinct_locations,span_days\n";
    auto row = [&](const char* stage, const DatasetStats& st) {
        out << stage << "," << st.users << "," << st.records << "," << st.sessions << ","
            << st.distinct_locations << "," << st.span_seconds / 86400 << "\n";
    };
    row("raw", rep.raw);
    row("filtered", rep.filtered);
}

void write_rejects(const std::vector<Reject>& rejects, std::ostream& out) {
    for (const auto& r : rejects)
        out << "line " << r.line_no << ": " << r.reason << ": " << r.line << "\n";
}

}  // namespace sanmove::data
