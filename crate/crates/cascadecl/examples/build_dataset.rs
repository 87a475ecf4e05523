//! Builds propagation graphs from raw records, end to end.
//!
//! Two hand-written news items are turned into graphs: each cascade (a
//! root tweet plus its retweets) becomes a chain of nodes, every cascade
//! hangs off a virtual news node, and edges follow the mention /
//! time-window rules. Run with:
//!
//! ```text
//! cargo run --example build_dataset
//! ```

use std::collections::{BTreeMap, BTreeSet};

use cascadecl::builder::{build_dataset, BuildOptions};
use cascadecl::records::{Label, TweetRecord, UserProfile};

fn tweet(id: &str, news: &str, user: &str, t: i64, root: Option<&str>) -> TweetRecord {
    TweetRecord {
        tweet_id: id.into(),
        news_id: news.into(),
        user_id: user.into(),
        timestamp_s: t,
        root_tweet_id: root.map(String::from),
        mentioned_user_ids: BTreeSet::new(),
        is_public: true,
    }
}

fn user(id: &str, followers: u64) -> UserProfile {
    UserProfile {
        user_id: id.into(),
        verified: followers > 500,
        created_months: 24,
        followers,
        friends: 150,
        lists: 3,
        favourites: 90,
        statuses: 400,
        follows: BTreeSet::new(),
    }
}

fn main() {
    // News n1: one root with two retweets; n2: two separate roots.
    let tweets = vec![
        tweet("t1", "n1", "alice", 1_000, None),
        tweet("t2", "n1", "bob", 1_600, Some("t1")),
        tweet("t3", "n1", "carol", 2_200, Some("t1")),
        tweet("t4", "n2", "dave", 5_000, None),
        tweet("t5", "n2", "erin", 9_000, None),
    ];
    let users: BTreeMap<String, UserProfile> = ["alice", "bob", "carol", "dave", "erin"]
        .iter()
        .enumerate()
        .map(|(i, name)| (name.to_string(), user(name, 100 * (i as u64 + 1) * 3)))
        .collect();
    let labels: BTreeMap<String, Label> = [
        ("n1".to_string(), Label::Fake),
        ("n2".to_string(), Label::Real),
    ]
    .into();

    let opts = BuildOptions::default(); // profile features, 5 h window
    let outcome = build_dataset(&tweets, &users, None, &labels, &opts).expect("valid records");
    for w in &outcome.warnings {
        eprintln!("warning: {w}");
    }

    let m = &outcome.dataset.manifest;
    println!(
        "built {} graphs; feature dim {}; mean nodes {:.1}; mean edges {:.1}",
        m.graph_count, m.feature_dim, m.mean_nodes, m.mean_edges
    );

    for g in &outcome.dataset.graphs {
        println!("\nnews {} ({}), {} nodes:", g.news_id, g.label, g.n);
        for &(s, d) in &g.edges {
            let name = |v: u32| match &g.node_meta[v as usize] {
                Some(meta) => meta.tweet_id.clone(),
                None => "<news>".into(),
            };
            println!("  {} -> {}", name(s), name(d));
        }
        // The news node carries no evidence of its own: all-zero features.
        assert!(g.features.row(0).iter().all(|v| *v == 0.0));
        g.validate().expect("structural invariants hold");
    }
}
