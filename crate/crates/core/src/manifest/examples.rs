//! Reference manifests for the Zoom, Notability and Uber integrations.

/// Zoom reads upcoming meetings with a Zoom link from the calendar.
pub const ZOOM: &str = r#"TITLE: Zoom
DESCRIPTION: Get all upcoming Zoom meetings
PIPELINE: PullCalendarEvents -> SelectEvents -> FilterTime 
                             -> FilterZoom -> PostToZoom

PullCalendarEvents(type: "Pull", resourceType: "google_calendar", 
                   query: "{ events(calendarId) {...EventDetails} }")
SelectEvents(type: "Select", field: "events")
FilterTime(type: "Filter", operation: ">", 
           field: "start.dateTime", targetValue: NOW)
FilterZoom(type: "Filter", operation: "match", 
           field: ["location", "description"], 
           pattern: "zoom\.us", requirement: "any")
PostToZoom(type: "Post", destination: "www.zoom.us")
"#;

/// Notability may only create files inside one Drive folder.
pub const NOTABILITY: &str = r#"TITLE: Notability
DESCRIPTION: Backup notes to Google Drive
PIPELINE: ReceiveRequest -> FilterPath -> Upload

ReceiveRequest(type: "Receive", source: "www.notability.com")
FilterPath(type: "Filter", operation: "match", field: ["parents"], 
           targetValue: "folderId")
Upload(type: "Write", action: "create", resourceType: "google_drive")
"#;

/// Uber receives only the dates of flight confirmation emails.
pub const UBER: &str = r#"TITLE: Uber
DESCRIPTION: Find upcoming flights to book rides on arrival
PIPELINE: PullGmail -> SelectMessages -> FilterFlights -> ExtractDate -> SendToUber

PullGmail(type: "Pull", resourceType: "gmail",
          query: "{ messages(userId) { snippet } }")
SelectMessages(type: "Select", field: "messages")
FilterFlights(type: "Filter", operation: "match", field: "snippet",
              pattern: "(?i)flight (confirmation|itinerary)")
ExtractDate(type: "Extract", operation: "date", field: "snippet")
SendToUber(type: "Post", destination: "www.uber.com")
"#;
