use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::CorpusError;
use crate::dex::{IrDocument, IrMethod};
use crate::Label;

/// Knobs of the synthetic program generator.
///
/// Every program is a forest of internal methods hanging off a few entry
/// points, with extra shared-callee edges and occasional back edges. Method
/// bodies draw from a shared API pool; malicious programs additionally
/// carry an ordered motif inside each planted method. Decoys spread a
/// strict subset of a motif's APIs over unrelated methods of either class,
/// so no single motif API identifies the class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SyntheticSpec {
    /// Inclusive range of internal methods per program.
    pub methods: (usize, usize),
    /// Inclusive range of entry points per program.
    pub roots: (usize, usize),
    /// Inclusive range of API invokes per method body.
    pub api_calls: (usize, usize),
    /// Probability that a method gains one extra call to a later method.
    pub shared_call_prob: f64,
    /// Probability that a method gains a call back to an earlier non-root
    /// method (or itself).
    pub recursion_prob: f64,
    /// Probability that a method body also calls an ignored library method.
    pub ignored_call_prob: f64,
    /// APIs used by both classes.
    pub api_pool: Vec<String>,
    /// Inclusive range of the per-program API profile: the subset of the
    /// pool a program's method bodies draw from.
    pub profile: (usize, usize),
    /// APIs present in nearly every program, each with this probability.
    pub common_apis: Vec<String>,
    pub common_prob: f64,
    /// Non-analyzed external methods (e.g. `java/`).
    pub ignored_pool: Vec<String>,
    /// Ordered malicious patterns.
    pub motifs: Vec<Vec<String>>,
    /// Inclusive range of planted methods in a malicious program.
    pub planted: (usize, usize),
    /// Expected number of decoys per program.
    pub decoys: f64,
    pub seed: u64,
}

fn android(sigs: &[&str]) -> Vec<String> {
    sigs.iter().map(|s| s.to_string()).collect()
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        let api_pool = android(&[
            "Landroid/app/Activity;->setContentView(I)V",
            "Landroid/app/Activity;->findViewById(I)Landroid/view/View;",
            "Landroid/app/Activity;->getIntent()Landroid/content/Intent;",
            "Landroid/app/Activity;->startActivity(Landroid/content/Intent;)V",
            "Landroid/app/Activity;->finish()V",
            "Landroid/app/Activity;->getSharedPreferences(Ljava/lang/String;I)Landroid/content/SharedPreferences;",
            "Landroid/app/Activity;->runOnUiThread(Ljava/lang/Runnable;)V",
            "Landroid/app/AlertDialog$Builder;->setTitle(Ljava/lang/CharSequence;)Landroid/app/AlertDialog$Builder;",
            "Landroid/app/AlertDialog$Builder;->show()Landroid/app/AlertDialog;",
            "Landroid/content/Intent;-><init>(Landroid/content/Context;Ljava/lang/Class;)V",
            "Landroid/content/Intent;->putExtra(Ljava/lang/String;Ljava/lang/String;)Landroid/content/Intent;",
            "Landroid/content/Intent;->getStringExtra(Ljava/lang/String;)Ljava/lang/String;",
            "Landroid/content/SharedPreferences;->getString(Ljava/lang/String;Ljava/lang/String;)Ljava/lang/String;",
            "Landroid/content/SharedPreferences;->edit()Landroid/content/SharedPreferences$Editor;",
            "Landroid/content/SharedPreferences$Editor;->putString(Ljava/lang/String;Ljava/lang/String;)Landroid/content/SharedPreferences$Editor;",
            "Landroid/content/SharedPreferences$Editor;->commit()Z",
            "Landroid/content/Context;->getResources()Landroid/content/res/Resources;",
            "Landroid/content/Context;->getPackageName()Ljava/lang/String;",
            "Landroid/content/Context;->getString(I)Ljava/lang/String;",
            "Landroid/content/res/Resources;->getDrawable(I)Landroid/graphics/drawable/Drawable;",
            "Landroid/view/View;->setOnClickListener(Landroid/view/View$OnClickListener;)V",
            "Landroid/view/View;->setVisibility(I)V",
            "Landroid/view/View;->invalidate()V",
            "Landroid/view/LayoutInflater;->inflate(ILandroid/view/ViewGroup;)Landroid/view/View;",
            "Landroid/widget/TextView;->setText(Ljava/lang/CharSequence;)V",
            "Landroid/widget/TextView;->getText()Ljava/lang/CharSequence;",
            "Landroid/widget/Toast;->makeText(Landroid/content/Context;Ljava/lang/CharSequence;I)Landroid/widget/Toast;",
            "Landroid/widget/Toast;->show()V",
            "Landroid/widget/ImageView;->setImageResource(I)V",
            "Landroid/widget/ListView;->setAdapter(Landroid/widget/ListAdapter;)V",
            "Landroid/widget/ArrayAdapter;->notifyDataSetChanged()V",
            "Landroid/widget/EditText;->getText()Landroid/text/Editable;",
            "Landroid/os/Handler;->post(Ljava/lang/Runnable;)Z",
            "Landroid/os/Handler;->postDelayed(Ljava/lang/Runnable;J)Z",
            "Landroid/os/Handler;->sendMessage(Landroid/os/Message;)Z",
            "Landroid/os/Bundle;->getString(Ljava/lang/String;)Ljava/lang/String;",
            "Landroid/os/Bundle;->putInt(Ljava/lang/String;I)V",
            "Landroid/os/SystemClock;->uptimeMillis()J",
            "Landroid/os/AsyncTask;->execute([Ljava/lang/Object;)Landroid/os/AsyncTask;",
            "Landroid/graphics/Canvas;->drawBitmap(Landroid/graphics/Bitmap;FFLandroid/graphics/Paint;)V",
            "Landroid/graphics/BitmapFactory;->decodeResource(Landroid/content/res/Resources;I)Landroid/graphics/Bitmap;",
            "Landroid/graphics/Paint;->setColor(I)V",
            "Landroid/media/MediaPlayer;->start()V",
            "Landroid/media/MediaPlayer;->release()V",
            "Landroid/database/sqlite/SQLiteDatabase;->query(Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;)Landroid/database/Cursor;",
            "Landroid/database/sqlite/SQLiteDatabase;->insert(Ljava/lang/String;Ljava/lang/String;Landroid/content/ContentValues;)J",
            "Landroid/database/Cursor;->moveToNext()Z",
            "Landroid/database/Cursor;->getString(I)Ljava/lang/String;",
            "Landroid/database/Cursor;->close()V",
            "Landroid/net/Uri;->parse(Ljava/lang/String;)Landroid/net/Uri;",
            "Landroid/text/TextUtils;->isEmpty(Ljava/lang/CharSequence;)Z",
            "Landroid/webkit/WebView;->loadUrl(Ljava/lang/String;)V",
            "Landroid/webkit/WebView;->getSettings()Landroid/webkit/WebSettings;",
            "Landroid/webkit/WebSettings;->setJavaScriptEnabled(Z)V",
            "Lorg/json/JSONObject;-><init>(Ljava/lang/String;)V",
            "Lorg/json/JSONObject;->getString(Ljava/lang/String;)Ljava/lang/String;",
            "Lorg/json/JSONArray;->length()I",
            "Lorg/apache/http/impl/client/DefaultHttpClient;-><init>()V",
            "Lorg/apache/http/client/methods/HttpGet;-><init>(Ljava/lang/String;)V",
            "Lorg/xmlpull/v1/XmlPullParser;->next()I",
        ]);
        let common_apis = android(&[
            "Landroid/app/Activity;->onCreate(Landroid/os/Bundle;)V",
            "Landroid/content/Context;->getApplicationContext()Landroid/content/Context;",
            "Landroid/util/Log;->d(Ljava/lang/String;Ljava/lang/String;)I",
            "Landroid/view/View;-><init>(Landroid/content/Context;)V",
            "Landroid/os/Handler;-><init>()V",
        ]);
        let ignored_pool = android(&[
            "Ljava/lang/StringBuilder;-><init>()V",
            "Ljava/lang/StringBuilder;->append(Ljava/lang/String;)Ljava/lang/StringBuilder;",
            "Ljava/lang/StringBuilder;->toString()Ljava/lang/String;",
            "Ljava/lang/String;->equals(Ljava/lang/Object;)Z",
            "Ljava/util/ArrayList;->add(Ljava/lang/Object;)Z",
            "Ljava/lang/Integer;->parseInt(Ljava/lang/String;)I",
            "Ljavax/crypto/Cipher;->doFinal([B)[B",
        ]);
        let motifs = vec![
            android(&[
                "Landroid/telephony/SmsManager;->getDefault()Landroid/telephony/SmsManager;",
                "Landroid/telephony/SmsManager;->divideMessage(Ljava/lang/String;)Ljava/util/ArrayList;",
                "Landroid/telephony/SmsManager;->sendTextMessage(Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Landroid/app/PendingIntent;Landroid/app/PendingIntent;)V",
            ]),
            android(&[
                "Landroid/telephony/TelephonyManager;->getDeviceId()Ljava/lang/String;",
                "Landroid/telephony/TelephonyManager;->getSubscriberId()Ljava/lang/String;",
                "Lorg/apache/http/client/methods/HttpPost;->setEntity(Lorg/apache/http/HttpEntity;)V",
            ]),
            android(&[
                "Landroid/location/LocationManager;->getLastKnownLocation(Ljava/lang/String;)Landroid/location/Location;",
                "Landroid/location/Location;->getLatitude()D",
                "Lorg/apache/http/client/HttpClient;->execute(Lorg/apache/http/client/methods/HttpUriRequest;)Lorg/apache/http/HttpResponse;",
            ]),
            android(&[
                "Ldalvik/system/DexClassLoader;-><init>(Ljava/lang/String;Ljava/lang/String;Ljava/lang/String;Ljava/lang/ClassLoader;)V",
                "Ldalvik/system/DexClassLoader;->loadClass(Ljava/lang/String;)Ljava/lang/Class;",
                "Landroid/content/Context;->getClassLoader()Ljava/lang/ClassLoader;",
            ]),
            android(&[
                "Landroid/content/ContentResolver;->query(Landroid/net/Uri;[Ljava/lang/String;Ljava/lang/String;[Ljava/lang/String;Ljava/lang/String;)Landroid/database/Cursor;",
                "Landroid/provider/ContactsContract$Contacts;->getLookupUri(JLjava/lang/String;)Landroid/net/Uri;",
                "Landroid/telephony/SmsMessage;->getOriginatingAddress()Ljava/lang/String;",
            ]),
            android(&[
                "Landroid/app/admin/DevicePolicyManager;->lockNow()V",
                "Landroid/app/admin/DevicePolicyManager;->resetPassword(Ljava/lang/String;I)Z",
                "Landroid/content/pm/PackageManager;->setComponentEnabledSetting(Landroid/content/ComponentName;II)V",
            ]),
        ];
        SyntheticSpec {
            methods: (20, 60),
            roots: (1, 4),
            api_calls: (1, 4),
            shared_call_prob: 0.1,
            recursion_prob: 0.05,
            ignored_call_prob: 0.3,
            api_pool,
            profile: (12, 24),
            common_apis,
            common_prob: 0.95,
            ignored_pool,
            motifs,
            planted: (1, 3),
            decoys: 1.0,
            seed: 0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<(), CorpusError> {
        let bad = |m: &str| Err(CorpusError::InfeasibleSpec(m.to_string()));
        let ordered = |r: (usize, usize)| r.0 <= r.1;
        if !ordered(self.methods) || !ordered(self.roots) || !ordered(self.api_calls)
            || !ordered(self.planted) {
            return bad("a range has min > max");
        }
        if self.roots.0 == 0 {
            return bad("programs need at least one root");
        }
        if self.methods.0 < 2 * self.roots.1 {
            return bad("need at least two methods per root so every root calls one");
        }
        if self.planted.1 > self.methods.0 - self.roots.1 {
            return bad("planted count exceeds the non-root method count");
        }
        if !ordered(self.profile) || self.profile.0 == 0 || self.profile.1 > self.api_pool.len() {
            return bad("profile size must lie in [1, pool size]");
        }
        if self.motifs.is_empty() || self.motifs.iter().any(|m| m.len() < 2) {
            return bad("need motifs of at least two APIs");
        }
        if self.planted.0 == 0 {
            return bad("malicious programs need at least one planted method");
        }
        for p in [self.shared_call_prob, self.recursion_prob, self.ignored_call_prob, self.common_prob] {
            if !(0.0..=1.0).contains(&p) {
                return bad("probabilities must lie in [0, 1]");
            }
        }
        if !(self.decoys >= 0.0) {
            return bad("decoy rate must be non-negative");
        }
        Ok(())
    }
}

const ROOT_NAMES: [(&str, &str, &str); 6] = [
    ("MainActivity", "onCreate", "(Landroid/os/Bundle;)V"),
    ("BootReceiver", "onReceive", "(Landroid/content/Context;Landroid/content/Intent;)V"),
    ("SyncService", "onStartCommand", "(Landroid/content/Intent;II)I"),
    ("MainActivity", "onClick", "(Landroid/view/View;)V"),
    ("Worker", "run", "()V"),
    ("SettingsActivity", "onResume", "()V"),
];
const CLASSES: [&str; 8] = [
    "Util", "NetHelper", "DataStore", "ViewBinder", "Task", "Config", "Core", "Adapter",
];
const PROTOS: [&str; 6] = [
    "()V",
    "(I)V",
    "(Ljava/lang/String;)V",
    "()Ljava/lang/String;",
    "(Landroid/content/Context;)Z",
    "(II)I",
];

fn draw(rng: &mut ChaCha8Rng, range: (usize, usize)) -> usize {
    rng.random_range(range.0..=range.1)
}

/// Insert `item` at a uniformly random position of `list`.
fn insert_anywhere(rng: &mut ChaCha8Rng, list: &mut Vec<String>, item: String) {
    let at = rng.random_range(0..=list.len());
    list.insert(at, item);
}

/// Generate one labeled program and its planted method signatures (empty
/// for benign programs).
pub fn generate_synthetic_program(
    spec: &SyntheticSpec,
    label: Label,
    rng: &mut ChaCha8Rng,
) -> Result<(IrDocument, Vec<String>), CorpusError> {
    spec.validate()?;
    let n = draw(rng, spec.methods);
    let r = draw(rng, spec.roots);
    let pkg = format!("Lcom/app{:04}", rng.random_range(0..10_000));
    let profile_len = draw(rng, spec.profile);
    let profile: Vec<&String> = spec.api_pool.choose_multiple(rng, profile_len).collect();

    let mut methods: Vec<IrMethod> = (0..n)
        .map(|i| {
            let (class, name, proto) = if i < r {
                let (c, m, p) = ROOT_NAMES[i % ROOT_NAMES.len()];
                (format!("{pkg}/{c}{};", i / ROOT_NAMES.len()), m.to_string(), p.to_string())
            } else {
                let c = CLASSES.choose(rng).unwrap();
                (format!("{pkg}/{c};"), format!("m{i}"), PROTOS.choose(rng).unwrap().to_string())
            };
            let k = draw(rng, spec.api_calls);
            let mut invokes: Vec<String> = (0..k)
                .map(|_| (*profile.choose(rng).unwrap()).clone())
                .collect();
            if !spec.ignored_pool.is_empty() && rng.random_bool(spec.ignored_call_prob) {
                let call = spec.ignored_pool.choose(rng).unwrap().clone();
                insert_anywhere(rng, &mut invokes, call);
            }
            IrMethod {
                class,
                name,
                proto,
                invokes,
            }
        })
        .collect();
    let sig: Vec<String> = methods.iter().map(IrMethod::signature).collect();

    // tree edges: every root gets a first child, every other non-root hangs
    // off a random earlier method
    let mut calls: Vec<Vec<usize>> = vec![Vec::new(); n];
    for i in r..n {
        let parent = if i < 2 * r { i - r } else { rng.random_range(0..i) };
        calls[parent].push(i);
    }
    for i in 0..n {
        if i + 1 < n && i >= r && rng.random_bool(spec.shared_call_prob) {
            let target = rng.random_range(i + 1..n).max(r);
            calls[i].push(target);
        }
        if i >= r && rng.random_bool(spec.recursion_prob) {
            let target = rng.random_range(r..=i);
            calls[i].push(target);
        }
    }
    for (i, targets) in calls.iter().enumerate() {
        for &t in targets {
            insert_anywhere(rng, &mut methods[i].invokes, sig[t].clone());
        }
    }

    let common: Vec<String> = spec
        .common_apis
        .iter()
        .filter(|_| rng.random_bool(spec.common_prob))
        .cloned()
        .collect();
    for api in common {
        let m = rng.random_range(0..n);
        insert_anywhere(rng, &mut methods[m].invokes, api);
    }

    // decoys: a strict subset of one motif, each API in its own method
    let decoys = {
        let whole = spec.decoys.floor() as usize;
        whole + usize::from(rng.random_bool(spec.decoys - whole as f64))
    };
    for _ in 0..decoys {
        let motif = spec.motifs.choose(rng).unwrap();
        let keep = rng.random_range(1..motif.len());
        let mut picked: Vec<&String> = motif.iter().collect();
        picked.shuffle(rng);
        for api in picked.into_iter().take(keep) {
            let m = rng.random_range(0..n);
            insert_anywhere(rng, &mut methods[m].invokes, api.clone());
        }
    }

    let mut planted = Vec::new();
    if label == Label::Malicious {
        let p = draw(rng, spec.planted);
        let mut candidates: Vec<usize> = (r..n).collect();
        candidates.shuffle(rng);
        for &m in candidates.iter().take(p) {
            let motif = spec.motifs.choose(rng).unwrap();
            let body = &mut methods[m].invokes;
            let at = rng.random_range(0..=body.len());
            body.splice(at..at, motif.iter().cloned());
            planted.push(sig[m].clone());
        }
        planted.sort();
    }

    Ok((
        IrDocument {
            methods,
            label: Some(label),
        },
        planted,
    ))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSample {
    pub id: String,
    pub label: Label,
    pub doc: IrDocument,
    pub planted: Vec<String>,
}

/// `count` programs, alternating malicious and benign. Sample `i` draws
/// from its own ChaCha stream `i` under `spec.seed`, so any sample can be
/// regenerated alone.
pub fn generate_corpus(spec: &SyntheticSpec, count: usize) -> Result<Vec<SyntheticSample>, CorpusError> {
    spec.validate()?;
    (0..count)
        .map(|i| {
            let label = if i % 2 == 0 { Label::Malicious } else { Label::Benign };
            let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
            rng.set_stream(i as u64);
            let (doc, planted) = generate_synthetic_program(spec, label, &mut rng)?;
            Ok(SyntheticSample {
                id: format!("s{i:05}"),
                label,
                doc,
                planted,
            })
        })
        .collect()
}
