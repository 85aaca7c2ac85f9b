use super::{DexProgram, MethodRef, RefKind};

/// Class-descriptor prefixes of the analyzed platform APIs. `java/` and
/// `javax/` are deliberately absent: they are excluded from analysis.
pub const API_PREFIXES: [&str; 9] = [
    "Landroid/",
    "Lcom/android/internal/util/",
    "Ldalvik/",
    "Lorg/apache/",
    "Lorg/json/",
    "Lorg/w3c/dom/",
    "Lorg/xml/sax",
    "Lorg/xmlpull/v1/",
    "Ljunit/",
];

pub fn is_api_descriptor(class_descriptor: &str) -> bool {
    API_PREFIXES.iter().any(|p| class_descriptor.starts_with(p))
}

pub(crate) fn kind_for(class_descriptor: &str, defined: bool) -> RefKind {
    if defined {
        RefKind::Internal
    } else if is_api_descriptor(class_descriptor) {
        RefKind::ExternalApi
    } else {
        RefKind::ExternalIgnored
    }
}

/// Classify a reference against the program it belongs to.
pub fn classify_method_ref(method_ref: &MethodRef, program: &DexProgram) -> RefKind {
    let defined = program
        .method_by_signature(&method_ref.signature())
        .is_some();
    kind_for(&method_ref.class_descriptor, defined)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn prefix_rules() {
        assert_eq!(kind_for("Landroid/telephony/SmsManager;", false), RefKind::ExternalApi);
        assert_eq!(kind_for("Lorg/xml/saxon/X;", false), RefKind::ExternalApi);
        assert_eq!(kind_for("Ljunit/framework/Assert;", false), RefKind::ExternalApi);
        assert_eq!(kind_for("Ljava/lang/String;", false), RefKind::ExternalIgnored);
        assert_eq!(kind_for("Ljavax/crypto/Cipher;", false), RefKind::ExternalIgnored);
        assert_eq!(kind_for("Lcom/example/Foo;", false), RefKind::ExternalIgnored);
        assert_eq!(kind_for("Landroid/app/Activity;", true), RefKind::Internal);
        // the prefix must match at the start of the descriptor
        assert_eq!(kind_for("Lcom/android/Foo;", false), RefKind::ExternalIgnored);
    }
}
